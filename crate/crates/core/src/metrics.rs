//! Evaluation metrics: Hausdorff Distance and F1 at a distance threshold.

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::loss::chamfer;
use crate::pointcloud::{BoundingBox, Point3, PointCloud};

/// Index and squared distance of the point in `set` closest to `p`. Ties go
/// to the lower index.
pub(crate) fn nearest(p: &Point3, set: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in set.iter().enumerate() {
        let d2 = p.distance_squared(q);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

/// Unsquared distance from each point of `from` to its nearest point in `to`.
fn nearest_distances(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    from.iter().map(|p| nearest(p, to).1.sqrt()).collect()
}

/// Whose bounding box sets the F1 distance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdBase {
    #[default]
    GroundTruth,
    Union,
}

impl std::str::FromStr for ThresholdBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gt" | "ground-truth" => Ok(ThresholdBase::GroundTruth),
            "union" => Ok(ThresholdBase::Union),
            other => Err(format!("unknown threshold base '{other}' (expected gt or union)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cd: f64,
    pub hd: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold_used: f64,
}

/// Larger of the two directed max-min distances (unsquared).
pub fn hausdorff(p: &PointCloud, q: &PointCloud) -> f64 {
    let directed = |a: &[Point3], b: &[Point3]| a.iter().map(|x| nearest(x, b).1).fold(0.0, f64::max);
    directed(p.points(), q.points())
        .max(directed(q.points(), p.points()))
        .sqrt()
}

/// F1 with threshold `tau_fraction ×` the ground-truth bounding-box diagonal.
pub fn f1_at(p: &PointCloud, q: &PointCloud, tau_fraction: f64) -> Result<F1Score> {
    f1_with_base(p, q, tau_fraction, ThresholdBase::GroundTruth)
}

pub fn f1_with_base(p: &PointCloud, q: &PointCloud, tau_fraction: f64, base: ThresholdBase) -> Result<F1Score> {
    if !(tau_fraction > 0.0 && tau_fraction.is_finite()) {
        return Err(GeoError::InvalidConfig(format!(
            "tau fraction must be positive, got {tau_fraction}"
        )));
    }
    let diagonal = match base {
        ThresholdBase::GroundTruth => q.bbox().diagonal(),
        ThresholdBase::Union => BoundingBox::of(p.points().iter().chain(q.points()))
            .expect("non-empty")
            .diagonal(),
    };
    if diagonal <= 0.0 {
        return Err(GeoError::DegenerateCloud);
    }
    let tau = tau_fraction * diagonal;
    let within = |d: Vec<f64>| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let precision = within(nearest_distances(p.points(), q.points()));
    let recall = within(nearest_distances(q.points(), p.points()));
    let denom = precision + recall;
    let f1 = if denom > 0.0 {
        2.0 * precision * recall / denom
    } else {
        0.0
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
        threshold_used: tau,
    })
}

/// CD, HD and F1@`tau_fraction` of a prediction against ground truth.
pub fn evaluate(pred: &PointCloud, gt: &PointCloud, tau_fraction: f64, base: ThresholdBase) -> Result<MetricsReport> {
    let f = f1_with_base(pred, gt, tau_fraction, base)?;
    Ok(MetricsReport {
        cd: chamfer(pred, gt, false).value,
        hd: hausdorff(pred, gt),
        f1: f.f1,
        precision: f.precision,
        recall: f.recall,
        threshold_used: f.threshold_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_arrays(pts).unwrap()
    }

    #[test]
    fn identical_clouds() {
        let p = cloud(&[[0.0; 3], [1.0, 2.0, 3.0], [0.5, 0.5, 0.5]]);
        assert_eq!(hausdorff(&p, &p), 0.0);
        let f = f1_at(&p, &p, 0.01).unwrap();
        assert_eq!((f.precision, f.recall, f.f1), (1.0, 1.0, 1.0));
        let m = evaluate(&p, &p, 0.01, ThresholdBase::GroundTruth).unwrap();
        assert_eq!((m.cd, m.hd, m.f1), (0.0, 0.0, 1.0));
    }

    #[test]
    fn hausdorff_directed_term_dominates() {
        let p = cloud(&[[0.0; 3]]);
        let q = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert_eq!(hausdorff(&p, &q), 1.0);
        assert_eq!(hausdorff(&q, &p), 1.0);
    }

    #[test]
    fn f1_hand_example() {
        let p = cloud(&[[0.0; 3], [0.5, 0.0, 0.0]]);
        let q = cloud(&[[0.0; 3], [0.5, 0.5, 0.5]]);
        let f = f1_at(&p, &q, 0.01).unwrap();
        assert!((f.threshold_used - 0.01 * 0.75f64.sqrt()).abs() < 1e-15);
        assert_eq!((f.precision, f.recall, f.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn f1_no_matches_is_zero_not_nan() {
        let p = cloud(&[[5.0, 5.0, 5.0]]);
        let q = cloud(&[[0.0; 3], [1.0, 1.0, 1.0]]);
        let f = f1_at(&p, &q, 0.01).unwrap();
        assert_eq!((f.precision, f.recall, f.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn f1_degenerate_gt() {
        let p = cloud(&[[0.0; 3]]);
        let q = cloud(&[[1.0; 3], [1.0; 3]]);
        assert!(matches!(f1_at(&p, &q, 0.01), Err(GeoError::DegenerateCloud)));
        // the union box is not degenerate
        assert!(f1_with_base(&p, &q, 0.01, ThresholdBase::Union).is_ok());
        assert!(f1_at(&p, &p, 0.0).is_err());
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..30)
            .prop_map(|v| PointCloud::from_arrays(&v).unwrap())
    }

    proptest! {
        #[test]
        fn metric_properties(p in arb_cloud(), q in arb_cloud(), off in prop::array::uniform3(-10.0f64..10.0)) {
            prop_assert_eq!(hausdorff(&p, &q), hausdorff(&q, &p));
            let shift = |c: &PointCloud| c.map_points(|x| x + Point3::from_array(off)).unwrap();
            let (ps, qs) = (shift(&p), shift(&q));
            prop_assert!((hausdorff(&p, &q) - hausdorff(&ps, &qs)).abs() < 1e-9);
            prop_assert!((chamfer(&p, &q, false).value - chamfer(&ps, &qs, false).value).abs() < 1e-9);
            if q.bbox().diagonal() > 0.0 {
                let mut last = 0.0;
                for tau in [0.01, 0.05, 0.1, 0.3, 1.0] {
                    let f = f1_at(&p, &q, tau).unwrap();
                    prop_assert!(f.f1 >= last);
                    last = f.f1;
                }
            }
        }
    }
}
