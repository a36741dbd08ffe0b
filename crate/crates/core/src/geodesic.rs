//! Multi-hop min-plus propagation over the kNN adjacency.
//!
//! Hop `h` holds, for every ordered pair, the length of the shortest walk of
//! at most `h` edges:
//!
//! ```text
//! A(h)[i][j] = min( A(h-1)[i][j], min_k A(h-1)[i][k] + A(1)[k][j] )
//! ```
//!
//! Each hop records the minimizing intermediate `k` so that every distance
//! can be traced back to a concrete edge path for gradient computation.
//!
//! Sentinel entries of `A(1)` never improve anything: `A(h-1)[i][k] >= 0`
//! and every entry is already at most the sentinel, so a candidate that adds
//! a sentinel edge loses (or ties, and ties keep the previous value). The
//! product therefore only visits real kNN edges, which makes a hop
//! `O(n · nnz)` instead of `O(n³)` while producing exactly the dense result.

use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::graph::Adjacency;

const NO_PRED: u32 = u32::MAX;

/// When to freeze a point's distance row during propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum MaskConfig {
    /// No masking; exact hop-bounded shortest walks.
    Off,
    /// Threshold = `factor ×` the mean kNN edge length of the 1-hop graph.
    Auto(f64),
    /// Fixed threshold in normalized units.
    Threshold(f64),
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig::Auto(2.0)
    }
}

impl MaskConfig {
    /// The absolute threshold for `adj`, or `None` when masking is off.
    pub fn resolve(&self, adj: &Adjacency) -> Option<f64> {
        match *self {
            MaskConfig::Off => None,
            MaskConfig::Auto(factor) => Some(factor * adj.mean_edge_length()),
            MaskConfig::Threshold(t) => Some(t),
        }
    }
}

impl std::str::FromStr for MaskConfig {
    type Err = String;

    /// Accepts `off`, `auto`, `auto:<factor>`, or a non-negative number.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        match s {
            "off" | "none" => return Ok(MaskConfig::Off),
            "auto" => return Ok(MaskConfig::default()),
            _ => {}
        }
        if let Some(f) = s.strip_prefix("auto:") {
            let factor: f64 = f.parse().map_err(|e| format!("bad mask factor '{f}': {e}"))?;
            if !(factor >= 0.0 && factor.is_finite()) {
                return Err(format!("mask factor must be non-negative, got {factor}"));
            }
            return Ok(MaskConfig::Auto(factor));
        }
        let t: f64 = s
            .parse()
            .map_err(|e| format!("bad mask threshold '{s}' (expected off, auto, auto:<f> or a number): {e}"))?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(format!("mask threshold must be non-negative, got {t}"));
        }
        Ok(MaskConfig::Threshold(t))
    }
}

impl std::fmt::Display for MaskConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskConfig::Off => write!(f, "off"),
            MaskConfig::Auto(x) => write!(f, "auto:{x}"),
            MaskConfig::Threshold(t) => write!(f, "{t}"),
        }
    }
}

/// Distance matrix after `h` hops, with the argmin intermediate of every
/// entry that improved at this hop and the set of still-active rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HopState {
    h: usize,
    n: usize,
    n_pred: usize,
    sentinel: f64,
    dist: Vec<f64>,
    pred: Vec<u32>,
    active: Vec<bool>,
}

impl HopState {
    /// The 1-hop state: distances equal the adjacency, all rows active.
    pub fn initial(adj: &Adjacency) -> HopState {
        let n = adj.len();
        HopState {
            h: 1,
            n,
            n_pred: adj.n_pred(),
            sentinel: adj.sentinel(),
            dist: adj.as_slice().to_vec(),
            pred: vec![NO_PRED; n * n],
            active: vec![true; n],
        }
    }

    pub fn hop(&self) -> usize {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_pred(&self) -> usize {
        self.n_pred
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

    pub fn as_slice(&self) -> &[f64] {
        &self.dist
    }

    /// The intermediate `k` through which `(i, j)` improved at this hop, or
    /// `None` if the entry was carried over from the previous hop.
    pub fn pred(&self, i: usize, j: usize) -> Option<usize> {
        match self.pred[i * self.n + j] {
            NO_PRED => None,
            k => Some(k as usize),
        }
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn masked_fraction(&self) -> f64 {
        self.active.iter().filter(|a| !**a).count() as f64 / self.n as f64
    }

    /// Column range of the other cloud for row `i`.
    fn cross_range(&self, i: usize) -> std::ops::Range<usize> {
        if i < self.n_pred {
            self.n_pred..self.n
        } else {
            0..self.n_pred
        }
    }
}

/// One min-plus hop: extends every active row by one edge of `adj`.
///
/// Ties prefer the previous value, then the lowest intermediate index.
/// Inactive rows are copied unchanged.
pub fn minplus_hop(prev: &HopState, adj: &Adjacency) -> Result<HopState> {
    let n = prev.n;
    if adj.len() != n {
        return Err(GeoError::DimensionMismatch {
            expected: n,
            actual: adj.len(),
        });
    }
    if adj.sentinel() != prev.sentinel {
        return Err(GeoError::InvalidConfig(format!(
            "sentinel mismatch: state uses {}, adjacency uses {}",
            prev.sentinel,
            adj.sentinel()
        )));
    }
    let sentinel = prev.sentinel;

    let mut dist = prev.dist.clone();
    let mut pred = vec![NO_PRED; n * n];
    dist.par_chunks_mut(n)
        .zip(pred.par_chunks_mut(n))
        .enumerate()
        .filter(|(i, _)| prev.active[*i])
        .for_each(|(i, (best, pred_row))| {
            let prev_row = prev.row(i);
            for (k, &dik) in prev_row.iter().enumerate() {
                if dik >= sentinel {
                    continue;
                }
                let adj_row = adj.row(k);
                for &j in adj.neighbors(k) {
                    let cand = dik + adj_row[j];
                    if cand < best[j] {
                        best[j] = cand;
                        pred_row[j] = k as u32;
                    }
                }
            }
        });

    Ok(HopState {
        h: prev.h + 1,
        n,
        n_pred: prev.n_pred,
        sentinel,
        dist,
        pred,
        active: prev.active.clone(),
    })
}

/// Freezes every active row whose closest point of the other cloud is
/// within `cross_threshold`. Frozen rows stay frozen; the points remain
/// valid intermediates for other rows.
pub fn apply_mask(mut state: HopState, cross_threshold: f64) -> HopState {
    for i in 0..state.n {
        if !state.active[i] {
            continue;
        }
        let row = state.row(i);
        let closest = state.cross_range(i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        if closest <= cross_threshold {
            state.active[i] = false;
        }
    }
    state
}

/// Result of propagation: the final distance matrix, its cross-set blocks,
/// and the predecessor chain needed to reconstruct each distance's path.
#[derive(Debug, Clone)]
pub struct GeoDistances {
    last: HopState,
    /// Predecessor matrices for hops 2..=n (index `h - 2`).
    chain: Vec<Vec<u32>>,
    neighbors: Vec<Vec<usize>>,
    mask_threshold: Option<f64>,
    masked_per_hop: Vec<f64>,
}

impl GeoDistances {
    pub fn n_pred(&self) -> usize {
        self.last.n_pred
    }

    pub fn n_gt(&self) -> usize {
        self.last.n - self.last.n_pred
    }

    pub fn hops(&self) -> usize {
        self.last.h
    }

    pub fn final_state(&self) -> &HopState {
        &self.last
    }

    /// Row `i` of the predicted → ground-truth block (length `n_gt`).
    pub fn xy_row(&self, i: usize) -> &[f64] {
        &self.last.row(i)[self.last.n_pred..]
    }

    /// Row `j` of the ground-truth → predicted block (length `n_pred`).
    pub fn yx_row(&self, j: usize) -> &[f64] {
        &self.last.row(self.last.n_pred + j)[..self.last.n_pred]
    }

    pub fn d_xy(&self) -> Vec<Vec<f64>> {
        (0..self.n_pred()).map(|i| self.xy_row(i).to_vec()).collect()
    }

    pub fn d_yx(&self) -> Vec<Vec<f64>> {
        (0..self.n_gt()).map(|j| self.yx_row(j).to_vec()).collect()
    }

    pub fn mask_threshold(&self) -> Option<f64> {
        self.mask_threshold
    }

    /// Fraction of points frozen before each hop `2..=n`.
    pub fn masked_per_hop(&self) -> &[f64] {
        &self.masked_per_hop
    }

    pub fn masked_fraction(&self) -> f64 {
        self.last.masked_fraction()
    }

    /// Node sequence of the walk realizing `dist[i][j]` in merged-set
    /// indices, starting at `i` and ending at `j`. `None` when the entry is
    /// the sentinel (no walk within the hop budget).
    pub fn path(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        let n = self.last.n;
        let mut reversed = Vec::new();
        let mut cur = j;
        for pred in self.chain.iter().rev() {
            let p = pred[i * n + cur];
            if p != NO_PRED {
                reversed.push(cur);
                cur = p as usize;
            }
        }
        if cur != i {
            if self.neighbors[i].binary_search(&cur).is_err() {
                debug_assert!(reversed.is_empty(), "improved entry rooted at a sentinel");
                return None;
            }
            reversed.push(cur);
        }
        reversed.push(i);
        reversed.reverse();
        Some(reversed)
    }

    /// Fraction of cross-set entries (both blocks) that are still the sentinel.
    pub fn sentinel_fraction(&self) -> f64 {
        let (np, ng) = (self.n_pred(), self.n_gt());
        let mut count = 0usize;
        for i in 0..np {
            for j in 0..ng {
                count += self.path(i, np + j).is_none() as usize;
                count += self.path(np + j, i).is_none() as usize;
            }
        }
        count as f64 / (2 * np * ng) as f64
    }

    /// Mean over both cross-set blocks.
    pub fn mean_cross_distance(&self) -> f64 {
        let xy: f64 = (0..self.n_pred()).flat_map(|i| self.xy_row(i)).sum();
        let yx: f64 = (0..self.n_gt()).flat_map(|j| self.yx_row(j)).sum();
        (xy + yx) / (2 * self.n_pred() * self.n_gt()) as f64
    }

    /// Hash of the kNN edge sets and every cross-set path. Two evaluations
    /// with equal signatures differentiate through the same edges.
    pub fn path_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.neighbors.hash(&mut h);
        let (np, n) = (self.n_pred(), self.last.n);
        for i in 0..n {
            let cols = if i < np { np..n } else { 0..np };
            for j in cols {
                self.path(i, j).hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Runs `n_hops - 1` min-plus hops starting from the adjacency itself
/// (`n_hops = 1` returns the adjacency's cross blocks).
pub fn propagate(adj: &Adjacency, n_hops: usize, mask: MaskConfig) -> Result<GeoDistances> {
    Ok(run(adj, n_hops, mask, false)?.0)
}

/// Like [`propagate`] but also returns every intermediate hop state
/// (`A(1)` through `A(n)`).
pub fn propagate_with_states(
    adj: &Adjacency,
    n_hops: usize,
    mask: MaskConfig,
) -> Result<(GeoDistances, Vec<HopState>)> {
    run(adj, n_hops, mask, true)
}

fn run(adj: &Adjacency, n_hops: usize, mask: MaskConfig, keep_states: bool) -> Result<(GeoDistances, Vec<HopState>)> {
    if n_hops == 0 {
        return Err(GeoError::InvalidConfig("n_hops must be at least 1".into()));
    }
    let threshold = mask.resolve(adj);
    let mut state = HopState::initial(adj);
    let mut chain = Vec::with_capacity(n_hops - 1);
    let mut masked_per_hop = Vec::with_capacity(n_hops - 1);
    let mut states = Vec::new();

    for _ in 1..n_hops {
        if let Some(t) = threshold {
            state = apply_mask(state, t);
        }
        masked_per_hop.push(state.masked_fraction());
        let next = minplus_hop(&state, adj)?;
        if keep_states {
            states.push(state);
        }
        state = next;
        chain.push(state.pred.clone());
    }
    if keep_states {
        states.push(state.clone());
    }

    let n = adj.len();
    Ok((
        GeoDistances {
            last: state,
            chain,
            neighbors: (0..n).map(|i| adj.neighbors(i).to_vec()).collect(),
            mask_threshold: threshold,
            masked_per_hop,
        },
        states,
    ))
}
