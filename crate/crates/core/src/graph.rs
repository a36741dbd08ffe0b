//! One-hop kNN adjacency over the merged predicted ∪ ground-truth set.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::pointcloud::{Point3, PointCloud};

/// Default value used in place of infinity for non-neighbor entries.
pub const DEFAULT_SENTINEL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Predicted,
    GroundTruth,
}

/// The concatenation `Z = X ∪ Y`: the first `n_pred` points are predicted,
/// the remaining `n_gt` are ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSet {
    points: Vec<Point3>,
    n_pred: usize,
    n_gt: usize,
}

impl MergedSet {
    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_pred(&self) -> usize {
        self.n_pred
    }

    pub fn n_gt(&self) -> usize {
        self.n_gt
    }

    pub fn origin(&self, i: usize) -> Origin {
        if i < self.n_pred {
            Origin::Predicted
        } else {
            Origin::GroundTruth
        }
    }

    pub fn origins(&self) -> impl Iterator<Item = Origin> + '_ {
        (0..self.len()).map(|i| self.origin(i))
    }
}

pub fn merge(pred: &PointCloud, gt: &PointCloud) -> MergedSet {
    let mut points = Vec::with_capacity(pred.len() + gt.len());
    points.extend_from_slice(pred.points());
    points.extend_from_slice(gt.points());
    MergedSet {
        points,
        n_pred: pred.len(),
        n_gt: gt.len(),
    }
}

/// Dense one-hop distance matrix.
///
/// `dist[i][j]` is `||z_i - z_j||` when `z_j` is one of the `k` nearest
/// neighbors of `z_i` and `sentinel` otherwise; the diagonal is 0. The graph
/// is directed: `j ∈ kNN(i)` does not imply `i ∈ kNN(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    n_pred: usize,
    k: usize,
    sentinel: f64,
    dist: Vec<f64>,
    /// Out-neighbors of each node, sorted by index.
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_pred(&self) -> usize {
        self.n_pred
    }

    pub fn n_gt(&self) -> usize {
        self.n - self.n_pred
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sentinel(&self) -> f64 {
        self.sentinel
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.n..(i + 1) * self.n]
    }

    /// Row-major `n × n` distances.
    pub fn as_slice(&self) -> &[f64] {
        &self.dist
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// True if `i → j` is a kNN edge (as opposed to a sentinel or diagonal entry).
    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Mean length of all kNN edges.
    pub fn mean_edge_length(&self) -> f64 {
        let (sum, count) = self
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().map(move |&j| (i, j)))
            .fold((0.0, 0usize), |(s, c), (i, j)| (s + self.get(i, j), c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Adds the reverse of every edge, so `i → j` exists whenever `j → i` does.
    pub fn symmetrized(&self) -> Adjacency {
        let mut out = self.clone();
        for i in 0..self.n {
            for &j in &self.neighbors[i] {
                out.dist[j * self.n + i] = self.get(i, j);
                out.neighbors[j].push(i);
            }
        }
        for ns in &mut out.neighbors {
            ns.sort_unstable();
            ns.dedup();
        }
        out
    }
}

/// Builds the directed kNN adjacency of `z`.
///
/// Self is excluded from the neighbor set; ties at the k-th neighbor distance
/// go to the lower index. Fails with `KTooLarge` if `k > |Z| - 1` and with
/// `EdgeExceedsSentinel` if any selected edge is longer than `sentinel`
/// (which means the input was not normalized).
pub fn knn_adjacency(z: &MergedSet, k: usize, sentinel: f64) -> Result<Adjacency> {
    let n = z.len();
    if k == 0 {
        return Err(GeoError::InvalidConfig("k must be at least 1".into()));
    }
    if n < 2 || k > n - 1 {
        return Err(GeoError::KTooLarge {
            k,
            points: n,
            max: n.saturating_sub(1),
        });
    }
    if !(sentinel > 0.0 && sentinel.is_finite()) {
        return Err(GeoError::InvalidConfig(format!(
            "sentinel must be positive and finite, got {sentinel}"
        )));
    }

    let pts = z.points();
    let rows: Vec<(Vec<f64>, Vec<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (pts[i].distance(&pts[j]), j))
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, |a, b| neighbor_order(*a, *b));
                cand.truncate(k);
            }
            let mut row = vec![sentinel; n];
            row[i] = 0.0;
            let mut nbrs: Vec<usize> = cand.iter().map(|&(_, j)| j).collect();
            nbrs.sort_unstable();
            for &(d, j) in &cand {
                row[j] = d;
            }
            (row, nbrs)
        })
        .collect();

    let mut dist = Vec::with_capacity(n * n);
    let mut neighbors = Vec::with_capacity(n);
    for (i, (row, nbrs)) in rows.into_iter().enumerate() {
        if let Some(&j) = nbrs.iter().find(|&&j| row[j] > sentinel) {
            return Err(GeoError::EdgeExceedsSentinel {
                from: i,
                to: j,
                length: row[j],
                sentinel,
            });
        }
        dist.extend_from_slice(&row);
        neighbors.push(nbrs);
    }

    Ok(Adjacency {
        n,
        n_pred: z.n_pred(),
        k,
        sentinel,
        dist,
        neighbors,
    })
}

/// Orders `(distance, index)` pairs the same way kNN selection does.
pub fn neighbor_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}
