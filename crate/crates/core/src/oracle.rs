//! Slow, independent reference implementations for verification.
//!
//! Nothing here calls into the propagation code of [`crate::geodesic`]; the
//! shortest-walk oracles read only the adjacency matrix.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geodesic::{propagate, propagate_with_states, MaskConfig};
use crate::graph::{knn_adjacency, merge, Adjacency};
use crate::loss::{geocd, GeoCdConfig};
use crate::pointcloud::{normalize_pair, PointCloud};

/// Absolute tolerance for oracle-vs-propagation comparisons.
pub const DISTANCE_TOLERANCE: f64 = 1e-9;
/// Relative tolerance for analytic-vs-finite-difference gradients.
pub const GRADIENT_REL_TOLERANCE: f64 = 1e-4;
/// Gradient components smaller than this are compared with this as the
/// denominator of the relative error.
pub const GRADIENT_FLOOR: f64 = 1e-4;
/// Minimum fraction of compared gradient components that must agree.
pub const GRADIENT_PASS_FRACTION: f64 = 0.95;
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub mismatch_count: usize,
    pub skipped_tie_components: usize,
    /// Number of entries or components compared.
    pub compared: usize,
}

impl OracleReport {
    pub fn merge(&mut self, o: &OracleReport) {
        self.max_abs_diff = self.max_abs_diff.max(o.max_abs_diff);
        self.max_rel_diff = self.max_rel_diff.max(o.max_rel_diff);
        self.mismatch_count += o.mismatch_count;
        self.skipped_tie_components += o.skipped_tie_components;
        self.compared += o.compared;
    }

    /// Fraction of compared items that matched.
    pub fn pass_fraction(&self) -> f64 {
        if self.compared == 0 {
            1.0
        } else {
            1.0 - self.mismatch_count as f64 / self.compared as f64
        }
    }
}

/// Minimum cost over directed walks of at most `n_hops` edges, for all
/// pairs, by Bellman–Ford relaxation rounds on the dense graph. Every
/// off-diagonal entry of `adj` (sentinels included) is an edge.
pub fn hop_bounded_shortest_paths(adj: &Adjacency, n_hops: usize) -> Vec<f64> {
    let n = adj.len();
    let mut out = vec![0.0; n * n];
    for s in 0..n {
        let mut dist = vec![f64::INFINITY; n];
        dist[s] = 0.0;
        for _ in 0..n_hops {
            let prev = dist.clone();
            for (u, &du) in prev.iter().enumerate() {
                if du == f64::INFINITY {
                    continue;
                }
                for (v, dv) in dist.iter_mut().enumerate() {
                    if u == v {
                        continue;
                    }
                    let c = du + adj.get(u, v);
                    if c < *dv {
                        *dv = c;
                    }
                }
            }
        }
        out[s * n..(s + 1) * n].copy_from_slice(&dist);
    }
    out
}

/// Converged all-pairs shortest paths by Dijkstra from every source.
pub fn dijkstra_all_pairs(adj: &Adjacency) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Key(f64);
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Key {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0)
        }
    }

    let n = adj.len();
    let mut out = vec![f64::INFINITY; n * n];
    for s in 0..n {
        let dist = &mut out[s * n..(s + 1) * n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[s] = 0.0;
        heap.push(Reverse((Key(0.0), s)));
        while let Some(Reverse((Key(d), u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for v in 0..n {
                if v == u || done[v] {
                    continue;
                }
                let c = d + adj.get(u, v);
                if c < dist[v] {
                    dist[v] = c;
                    heap.push(Reverse((Key(c), v)));
                }
            }
        }
    }
    out
}

/// Entrywise comparison with absolute tolerance `tol`.
pub fn compare_matrices(actual: &[f64], expected: &[f64], tol: f64) -> OracleReport {
    assert_eq!(actual.len(), expected.len());
    let mut r = OracleReport::default();
    for (a, e) in actual.iter().zip(expected) {
        let abs = (a - e).abs();
        let rel = if *e != 0.0 { abs / e.abs() } else { abs };
        r.max_abs_diff = r.max_abs_diff.max(abs);
        r.max_rel_diff = r.max_rel_diff.max(rel);
        r.mismatch_count += (abs > tol || abs.is_nan()) as usize;
        r.compared += 1;
    }
    r
}

/// Central-difference gradient with per-component flags for evaluations
/// whose differentiation structure changed.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffGrad {
    pub grad: Vec<[f64; 3]>,
    pub flagged: Vec<[bool; 3]>,
}

/// Central differences of `loss_fn` with respect to every coordinate of
/// `cloud`. `loss_fn` returns the loss value and a signature of its
/// piecewise-smooth branch (e.g. the argmin paths); a component is flagged
/// when the signatures at `x ± step` differ from each other or from `x`.
pub fn finite_diff_grad<F>(loss_fn: F, cloud: &PointCloud, step: f64) -> Result<FiniteDiffGrad>
where
    F: Fn(&PointCloud) -> Result<(f64, u64)>,
{
    let (_, base_sig) = loss_fn(cloud)?;
    let flat = cloud.to_flat();
    let mut grad = vec![[0.0; 3]; cloud.len()];
    let mut flagged = vec![[false; 3]; cloud.len()];
    for idx in 0..flat.len() {
        let mut plus = flat.clone();
        plus[idx] += step;
        let mut minus = flat.clone();
        minus[idx] -= step;
        let (fp, sp) = loss_fn(&PointCloud::from_flat(&plus)?)?;
        let (fm, sm) = loss_fn(&PointCloud::from_flat(&minus)?)?;
        grad[idx / 3][idx % 3] = (fp - fm) / (2.0 * step);
        flagged[idx / 3][idx % 3] = sp != sm || sp != base_sig;
    }
    Ok(FiniteDiffGrad { grad, flagged })
}

/// Relative error `|a - f| / max(|a|, |f|, GRADIENT_FLOOR)`.
pub fn gradient_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

pub fn compare_gradients(analytic: &[[f64; 3]], fd: &FiniteDiffGrad, rel_tol: f64) -> OracleReport {
    let mut r = OracleReport::default();
    for ((a, f), flags) in analytic.iter().zip(&fd.grad).zip(&fd.flagged) {
        for c in 0..3 {
            if flags[c] {
                r.skipped_tie_components += 1;
                continue;
            }
            let abs = (a[c] - f[c]).abs();
            let rel = gradient_rel_error(a[c], f[c]);
            r.max_abs_diff = r.max_abs_diff.max(abs);
            r.max_rel_diff = r.max_rel_diff.max(rel);
            r.mismatch_count += (rel >= rel_tol || rel.is_nan()) as usize;
            r.compared += 1;
        }
    }
    r
}

/// Checks the analytic GeoCD gradient of `pred` against central differences.
pub fn check_geocd_gradient(pred: &PointCloud, gt: &PointCloud, cfg: &GeoCdConfig, step: f64) -> Result<OracleReport> {
    let analytic = geocd(pred, gt, cfg, true)?;
    let fd = finite_diff_grad(
        |p| {
            let r = geocd(p, gt, cfg, true)?;
            Ok((r.value, r.diagnostics.path_signature))
        },
        pred,
        step,
    )?;
    Ok(compare_gradients(&analytic.grad_pred, &fd, GRADIENT_REL_TOLERANCE))
}

/// A jointly normalized pair of uniform random clouds.
pub fn random_pair(rng: &mut impl Rng, n: usize, m: usize) -> (PointCloud, PointCloud) {
    let mut gen = |c: usize| {
        let v: Vec<[f64; 3]> = (0..c).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        PointCloud::from_arrays(&v).expect("finite")
    };
    let (a, b) = (gen(n), gen(m));
    let (a, b, _) = normalize_pair(&a, &b).expect("random clouds are not degenerate");
    (a, b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub seed: u64,
    pub mask_threshold: f64,
    /// Perturb the propagation result before comparing (negative control).
    pub inject_fault: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 10,
            min_size: 16,
            max_size: 32,
            seed: 0,
            mask_threshold: 0.05,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Offender {
    pub trial: usize,
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub trials: usize,
    /// Aggregate over all checks.
    #[serde(flatten)]
    pub overall: OracleReport,
    pub oracle_equivalence: OracleReport,
    pub converged_cross_check: OracleReport,
    pub gradient: OracleReport,
    pub gradient_pass_fraction: f64,
    pub monotonicity_violations: usize,
    pub masking: OracleReport,
    pub worst_offenders: Vec<Offender>,
}

/// Runs the randomized oracle suite: propagation vs hop-bounded
/// Bellman–Ford, Bellman–Ford vs Dijkstra at convergence, per-hop
/// monotonicity, masking soundness and gradient checks.
pub fn run_verification(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut equivalence = OracleReport::default();
    let mut converged = OracleReport::default();
    let mut gradient = OracleReport::default();
    let mut masking = OracleReport::default();
    let mut monotonicity_violations = 0;
    let mut offenders = Vec::new();
    let lo = cfg.min_size.max(2);
    let hi = cfg.max_size.max(lo);

    for trial in 0..cfg.trials {
        let n = rng.random_range(lo..=hi);
        let m = rng.random_range(lo..=hi);
        let k = [2, 3, 5][rng.random_range(0..3)];
        let hops = rng.random_range(1..=4);
        let (pred, gt) = random_pair(&mut rng, n, m);
        let adj = knn_adjacency(&merge(&pred, &gt), k, 1.0)?;

        let (geo, states) = propagate_with_states(&adj, hops, MaskConfig::Off)?;
        let mut produced = geo.final_state().as_slice().to_vec();
        if cfg.inject_fault {
            produced[1] += 1e-6;
        }
        let r = compare_matrices(&produced, &hop_bounded_shortest_paths(&adj, hops), DISTANCE_TOLERANCE);
        if r.mismatch_count > 0 {
            offenders.push(Offender {
                trial,
                check: "oracle_equivalence".into(),
                detail: format!("n={n} m={m} k={k} hops={hops} max_abs_diff={:e}", r.max_abs_diff),
            });
        }
        equivalence.merge(&r);

        for w in states.windows(2) {
            let bad = w[1]
                .as_slice()
                .iter()
                .zip(w[0].as_slice())
                .filter(|(cur, prev)| cur > prev)
                .count();
            if bad > 0 {
                offenders.push(Offender {
                    trial,
                    check: "monotonicity".into(),
                    detail: format!("{bad} entries increased at hop {}", w[1].hop()),
                });
            }
            monotonicity_violations += bad;
        }

        // small instances: Bellman–Ford with |Z|-1 rounds must equal Dijkstra
        if n + m <= 40 {
            let bf = hop_bounded_shortest_paths(&adj, n + m - 1);
            let r = compare_matrices(&bf, &dijkstra_all_pairs(&adj), 1e-12);
            if r.mismatch_count > 0 {
                offenders.push(Offender {
                    trial,
                    check: "converged_cross_check".into(),
                    detail: format!("max_abs_diff={:e}", r.max_abs_diff),
                });
            }
            converged.merge(&r);
        }

        let masked = propagate(&adj, hops.max(2), MaskConfig::Threshold(cfg.mask_threshold))?;
        let unmasked = propagate(&adj, hops.max(2), MaskConfig::Off)?;
        let mut r = OracleReport::default();
        for (mv, uv) in masked
            .final_state()
            .as_slice()
            .iter()
            .zip(unmasked.final_state().as_slice())
        {
            let below = mv < uv;
            let disagree = *uv <= cfg.mask_threshold && (mv - uv).abs() > DISTANCE_TOLERANCE;
            r.max_abs_diff = r.max_abs_diff.max((mv - uv).abs());
            r.mismatch_count += (below || disagree) as usize;
            r.compared += 1;
        }
        if r.mismatch_count > 0 {
            offenders.push(Offender {
                trial,
                check: "masking".into(),
                detail: format!("{} entries violate masked >= unmasked", r.mismatch_count),
            });
        }
        masking.merge(&r);

        let gcfg = GeoCdConfig {
            k: 3,
            n_hops: 2,
            mask: MaskConfig::Off,
            ..Default::default()
        };
        let r = check_geocd_gradient(&pred, &gt, &gcfg, DEFAULT_FD_STEP)?;
        if r.mismatch_count > 0 {
            offenders.push(Offender {
                trial,
                check: "gradient".into(),
                detail: format!(
                    "{} of {} components off, max_rel_diff={:e}",
                    r.mismatch_count, r.compared, r.max_rel_diff
                ),
            });
        }
        gradient.merge(&r);
    }

    let mut overall = OracleReport::default();
    for r in [&equivalence, &converged, &gradient, &masking] {
        overall.merge(r);
    }
    let gradient_pass_fraction = gradient.pass_fraction();
    let passed = equivalence.mismatch_count == 0
        && converged.mismatch_count == 0
        && masking.mismatch_count == 0
        && monotonicity_violations == 0
        && gradient_pass_fraction >= GRADIENT_PASS_FRACTION;
    offenders.truncate(20);

    Ok(VerifyReport {
        passed,
        trials: cfg.trials,
        overall,
        oracle_equivalence: equivalence,
        converged_cross_check: converged,
        gradient,
        gradient_pass_fraction,
        monotonicity_violations,
        masking,
        worst_offenders: offenders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::chamfer;
    use crate::pointcloud::Point3;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_arrays(pts).unwrap()
    }

    #[test]
    fn one_hop_is_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = random_pair(&mut rng, 6, 5);
        let adj = knn_adjacency(&merge(&a, &b), 2, 1.0).unwrap();
        assert_eq!(hop_bounded_shortest_paths(&adj, 1), adj.as_slice());
    }

    #[test]
    fn l_shape_two_hops() {
        let z = merge(&cloud(&[[0.0; 3]]), &cloud(&[[0.4, 0.0, 0.0], [0.4, 0.3, 0.0]]));
        let adj = knn_adjacency(&z, 1, 1.0).unwrap();
        let d = hop_bounded_shortest_paths(&adj, 2);
        assert!((d[2] - 0.7).abs() < 1e-12);
        assert_eq!(hop_bounded_shortest_paths(&adj, 1)[2], 1.0);
    }

    #[test]
    fn bellman_ford_converges_to_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let (a, b) = random_pair(&mut rng, 9, 8);
            let adj = knn_adjacency(&merge(&a, &b), 2, 1.0).unwrap();
            let bf = hop_bounded_shortest_paths(&adj, adj.len() - 1);
            let r = compare_matrices(&bf, &dijkstra_all_pairs(&adj), 1e-12);
            assert_eq!(r.mismatch_count, 0, "{r:?}");
        }
    }

    #[test]
    fn fd_of_chamfer_single_pair() {
        let p = cloud(&[[0.0; 3]]);
        let q = cloud(&[[1.0, 0.0, 0.0]]);
        let fd = finite_diff_grad(|c| Ok((chamfer(c, &q, false).value, 0)), &p, DEFAULT_FD_STEP).unwrap();
        let expect = [-4.0, 0.0, 0.0];
        for (g, e) in fd.grad[0].iter().zip(expect) {
            assert!((g - e).abs() < 1e-6);
        }
    }

    #[test]
    fn fd_of_geocd_single_pair() {
        let (p, q) = (Point3::new(0.1, 0.0, 0.2), Point3::new(0.5, 0.3, 0.0));
        let (pc, qc) = (PointCloud::new(vec![p]).unwrap(), PointCloud::new(vec![q]).unwrap());
        let cfg = GeoCdConfig {
            k: 1,
            ..Default::default()
        };
        let fd = finite_diff_grad(
            |c| {
                let r = geocd(c, &qc, &cfg, true)?;
                Ok((r.value, r.diagnostics.path_signature))
            },
            &pc,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        let expect = ((p - q) * (2.0 / p.distance(&q))).to_array();
        for ((g, e), flagged) in fd.grad[0].iter().zip(expect).zip(fd.flagged[0]) {
            assert!((g - e).abs() < 1e-8);
            assert!(!flagged);
        }
    }

    #[test]
    fn gradient_check_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = random_pair(&mut rng, 16, 16);
        let cfg = GeoCdConfig {
            k: 3,
            n_hops: 2,
            mask: MaskConfig::Off,
            ..Default::default()
        };
        let r = check_geocd_gradient(&a, &b, &cfg, DEFAULT_FD_STEP).unwrap();
        assert!(r.pass_fraction() >= GRADIENT_PASS_FRACTION, "{r:?}");
    }

    #[test]
    fn verification_suite_passes_and_detects_faults() {
        let cfg = VerifyConfig {
            trials: 3,
            min_size: 8,
            max_size: 12,
            ..Default::default()
        };
        let r = run_verification(&cfg).unwrap();
        assert!(r.passed, "{r:?}");
        let bad = run_verification(&VerifyConfig {
            inject_fault: true,
            ..cfg
        })
        .unwrap();
        assert!(!bad.passed);
        assert!(bad.oracle_equivalence.mismatch_count > 0);
        let none = run_verification(&VerifyConfig {
            trials: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(none.passed);
        assert_eq!(none.overall.compared, 0);
    }
}
