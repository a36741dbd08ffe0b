//! Point-cloud data model and unit-bounding-box normalization.
//!
//! All geodesic computations assume every pairwise distance is below the
//! sentinel value 1.0. Scaling by the inverse of the bounding-box diagonal
//! (rather than the longest side) is what guarantees that bound, so that is
//! the convention used throughout.

mod io;

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

pub use io::{read_cloud, write_cloud, Format};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm_squared(&self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        (*self - *other).norm_squared()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    fn component_min(self, o: Point3) -> Point3 {
        Point3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    fn component_max(self, o: Point3) -> Point3 {
        Point3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<BoundingBox> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| {
            (lo.component_min(*p), hi.component_max(*p))
        });
        Some(BoundingBox { min, max })
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// An ordered, non-empty list of finite 3D points.
///
/// Point order is significant: indices are used by the kNN graph and the
/// predecessor records of the geodesic propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    pub name: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeoError::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeoError::NonFinite { index });
        }
        Ok(PointCloud { points, name: None })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn from_arrays(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().copied().map(Point3::from_array).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::of(&self.points).expect("point cloud is non-empty")
    }

    /// Returns a copy with every point mapped through `f`.
    pub fn map_points(&self, f: impl Fn(Point3) -> Point3) -> Result<Self> {
        let mut out = Self::new(self.points.iter().map(|p| f(*p)).collect())?;
        out.name = self.name.clone();
        Ok(out)
    }

    /// Flattened `[x0, y0, z0, x1, ...]` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(GeoError::DimensionMismatch {
                expected: coords.len() - coords.len() % 3,
                actual: coords.len(),
            });
        }
        Self::new(coords.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }
}

/// `p ↦ (p + translation) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub translation: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub const IDENTITY: NormalizationTransform = NormalizationTransform {
        translation: Point3::ORIGIN,
        scale: 1.0,
    };

    /// Transform that centers `bbox` at the origin and scales its diagonal to 1.
    pub fn for_bbox(bbox: &BoundingBox) -> Result<Self> {
        let diagonal = bbox.diagonal();
        if diagonal <= 0.0 || !diagonal.is_finite() {
            return Err(GeoError::DegenerateCloud);
        }
        Ok(NormalizationTransform {
            translation: Point3::ORIGIN - bbox.center(),
            scale: 1.0 / diagonal,
        })
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        (p + self.translation) * self.scale
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        p * (1.0 / self.scale) - self.translation
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> Result<PointCloud> {
        cloud.map_points(|p| self.apply(p))
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> Result<PointCloud> {
        cloud.map_points(|p| self.invert(p))
    }
}

/// Centers the cloud's bounding box at the origin and scales it uniformly so
/// the box diagonal is 1. Every pairwise distance of the result is then at
/// most 1.
pub fn normalize_unit_bbox(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let t = NormalizationTransform::for_bbox(&cloud.bbox())?;
    Ok((t.apply_cloud(cloud)?, t))
}

/// Normalizes a (predicted, ground-truth) pair with one shared transform
/// derived from the bounding box of their union, so cross-set distances are
/// bounded by 1 as well.
pub fn normalize_pair(pred: &PointCloud, gt: &PointCloud) -> Result<(PointCloud, PointCloud, NormalizationTransform)> {
    let bbox = BoundingBox::of(pred.points().iter().chain(gt.points())).expect("non-empty");
    let t = NormalizationTransform::for_bbox(&bbox)?;
    Ok((t.apply_cloud(pred)?, t.apply_cloud(gt)?, t))
}

/// Independent (predicted, ground-truth) pairs. Sizes may differ per pair.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub pairs: Vec<(PointCloud, PointCloud)>,
}

impl Batch {
    pub fn new(pairs: Vec<(PointCloud, PointCloud)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(GeoError::InvalidConfig("batch must contain at least one pair".into()));
        }
        Ok(Batch { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Normalizes each pair with its own shared transform.
    pub fn normalized(&self) -> Vec<Result<(PointCloud, PointCloud)>> {
        self.pairs
            .iter()
            .map(|(p, g)| normalize_pair(p, g).map(|(p, g, _)| (p, g)))
            .collect()
    }
}
