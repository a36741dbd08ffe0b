//! Chamfer Distance, softmin and the GeoCD loss, with analytic gradients.
//!
//! Note the distance conventions: Chamfer Distance averages *squared*
//! nearest-neighbor distances, while GeoCD works on plain (unsquared) edge
//! lengths. Gradient magnitudes therefore differ between the two losses.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geodesic::{propagate, MaskConfig};
use crate::graph::{knn_adjacency, merge, DEFAULT_SENTINEL};
use crate::metrics::nearest;
use crate::pointcloud::{Batch, PointCloud};

/// Edges shorter than this are treated as degenerate and carry no gradient.
pub const DEGENERATE_EDGE_LENGTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCdConfig {
    pub k: usize,
    pub n_hops: usize,
    pub sentinel: f64,
    pub mask: MaskConfig,
    /// Add reverse edges to the kNN graph before propagation.
    pub symmetrize: bool,
    /// Also compute gradients with respect to the ground-truth points.
    pub gt_grad: bool,
}

impl Default for GeoCdConfig {
    fn default() -> Self {
        GeoCdConfig {
            k: 5,
            n_hops: 2,
            sentinel: DEFAULT_SENTINEL,
            mask: MaskConfig::default(),
            symmetrize: false,
            gt_grad: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Fraction of cross-set entries (both directions) left at the sentinel.
    pub sentinel_fraction: f64,
    /// Fraction of points frozen by masking at the last hop.
    pub masked_fraction: f64,
    pub hops_used: usize,
    pub mask_threshold: Option<f64>,
    /// Path edges skipped in the gradient because their endpoints coincide.
    pub degenerate_edges: usize,
    pub mean_cross_distance: f64,
    /// Hash of the kNN graph and all cross-set paths; 0 when gradients were
    /// not requested.
    pub path_signature: u64,
}

/// Wall-clock seconds per stage. Informational only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub graph_s: f64,
    pub propagation_s: f64,
    pub loss_s: f64,
    pub total_s: f64,
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: StageTimings) {
        self.graph_s += o.graph_s;
        self.propagation_s += o.propagation_s;
        self.loss_s += o.loss_s;
        self.total_s += o.total_s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    /// d(loss)/d(predicted coordinates); empty when not requested.
    pub grad_pred: Vec<[f64; 3]>,
    pub grad_gt: Option<Vec<[f64; 3]>>,
    pub diagnostics: Diagnostics,
    pub timings: StageTimings,
}

/// `-log Σ exp(-d_j)`, evaluated with a min-shift. Returns `+∞` for an
/// empty row.
pub fn softmin(row: &[f64]) -> f64 {
    let Some(m) = row.iter().copied().reduce(f64::min) else {
        return f64::INFINITY;
    };
    let s: f64 = row.iter().map(|d| (m - d).exp()).sum();
    m - s.ln()
}

/// Softmin weights `exp(-d_j) / Σ exp(-d_j')`, i.e. the derivative of
/// `softmin(row)` with respect to each `d_j`.
pub fn softmin_weights(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = row.iter().map(|d| (m - d).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Chamfer Distance with squared Euclidean distances.
///
/// Nearest-neighbor ties go to the lower index. The gradient with respect to
/// the ground truth is not computed.
pub fn chamfer(pred: &PointCloud, gt: &PointCloud, with_grad: bool) -> LossReport {
    let start = Instant::now();
    let (p, q) = (pred.points(), gt.points());
    let (n, m) = (p.len() as f64, q.len() as f64);
    let mut grad = if with_grad { vec![[0.0; 3]; p.len()] } else { Vec::new() };

    let mut forward = 0.0;
    for (i, pi) in p.iter().enumerate() {
        let (j, d2) = nearest(pi, q);
        forward += d2;
        if with_grad {
            let g = (*pi - q[j]) * (2.0 / n);
            add(&mut grad[i], g.to_array(), 1.0);
        }
    }
    let mut backward = 0.0;
    for qj in q {
        let (i, d2) = nearest(qj, p);
        backward += d2;
        if with_grad {
            let g = (p[i] - *qj) * (2.0 / m);
            add(&mut grad[i], g.to_array(), 1.0);
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    LossReport {
        value: forward / n + backward / m,
        grad_pred: grad,
        grad_gt: None,
        diagnostics: Diagnostics::default(),
        timings: StageTimings {
            loss_s: elapsed,
            total_s: elapsed,
            ..Default::default()
        },
    }
}

fn add(acc: &mut [f64; 3], v: [f64; 3], s: f64) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += s * b;
    }
}

/// GeoCD loss of a jointly normalized pair.
///
/// The value is the mean softmin of each predicted point's geodesic row to the
/// ground truth plus the mean softmin of each ground-truth point's row to the
/// prediction. Sentinel entries stay in the softmin sums as constants. Each
/// real entry's gradient is distributed along its recorded shortest path.
pub fn geocd(pred: &PointCloud, gt: &PointCloud, cfg: &GeoCdConfig, with_grad: bool) -> Result<LossReport> {
    let t0 = Instant::now();
    let z = merge(pred, gt);
    let mut adj = knn_adjacency(&z, cfg.k, cfg.sentinel)?;
    if cfg.symmetrize {
        adj = adj.symmetrized();
    }
    let t_graph = Instant::now();
    let geo = propagate(&adj, cfg.n_hops, cfg.mask)?;
    let t_prop = Instant::now();

    let (np, ng) = (pred.len(), gt.len());
    let pts = z.points();

    let mut zgrad = if with_grad { vec![[0.0; 3]; z.len()] } else { Vec::new() };
    let mut degenerate_edges = 0usize;
    let mut sentinel_entries = 0usize;

    // (row index in merged set, first column, row values, 1/row count)
    let rows = (0..np)
        .map(|i| (i, np, geo.xy_row(i), 1.0 / np as f64))
        .chain((0..ng).map(|j| (np + j, 0, geo.yx_row(j), 1.0 / ng as f64)));
    let mut term_xy = 0.0;
    let mut term_yx = 0.0;
    for (src, col0, row, scale) in rows {
        let s = softmin(row);
        if src < np {
            term_xy += s;
        } else {
            term_yx += s;
        }
        if !with_grad {
            continue;
        }
        let weights = softmin_weights(row);
        for (c, w) in weights.into_iter().enumerate() {
            let Some(path) = geo.path(src, col0 + c) else {
                sentinel_entries += 1;
                continue;
            };
            for e in path.windows(2) {
                let (a, b) = (e[0], e[1]);
                let diff = pts[a] - pts[b];
                let len = diff.norm();
                if len < DEGENERATE_EDGE_LENGTH {
                    degenerate_edges += 1;
                    continue;
                }
                let g = diff.to_array();
                let coef = scale * w / len;
                add(&mut zgrad[a], g, coef);
                add(&mut zgrad[b], g, -coef);
            }
        }
    }
    let value = term_xy / np as f64 + term_yx / ng as f64;

    let (sentinel_fraction, path_signature) = if with_grad {
        (sentinel_entries as f64 / (2 * np * ng) as f64, geo.path_signature())
    } else {
        (geo.sentinel_fraction(), 0)
    };

    let (grad_pred, grad_gt) = if with_grad {
        let gt_part = zgrad.split_off(np);
        (zgrad, cfg.gt_grad.then_some(gt_part))
    } else {
        (Vec::new(), None)
    };

    let t_end = Instant::now();
    Ok(LossReport {
        value,
        grad_pred,
        grad_gt,
        diagnostics: Diagnostics {
            sentinel_fraction,
            masked_fraction: geo.masked_fraction(),
            hops_used: geo.hops(),
            mask_threshold: geo.mask_threshold(),
            degenerate_edges,
            mean_cross_distance: geo.mean_cross_distance(),
            path_signature,
        },
        timings: StageTimings {
            graph_s: (t_graph - t0).as_secs_f64(),
            propagation_s: (t_prop - t_graph).as_secs_f64(),
            loss_s: (t_end - t_prop).as_secs_f64(),
            total_s: (t_end - t0).as_secs_f64(),
        },
    })
}

/// Evaluates [`geocd`] on every pair independently. Results are in input
/// order; an error in one pair does not affect the others.
pub fn geocd_batch(batch: &Batch, cfg: &GeoCdConfig, with_grad: bool) -> Vec<Result<LossReport>> {
    batch
        .pairs
        .par_iter()
        .map(|(p, g)| geocd(p, g, cfg, with_grad))
        .collect()
}
