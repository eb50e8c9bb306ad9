//! Logarithmic (T1, T2) grids.
//!
//! All search, evaluation, and dictionary grids in this crate are outer
//! products of log-spaced T1 and T2 axes, filtered to the physical half-plane
//! T1 > T2. Two details differ between use sites and are therefore options
//! here: whether grid values are rounded to integer milliseconds (the
//! surrogate training grid is; everything else is not), and whether the
//! filter is strict (`>`), which only matters in the rounded case.

use crate::bloch::Theta;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default T1 bounds (ms) of the model/search domain.
pub const SEARCH_T1: (f64, f64) = (10.0, 6000.0);
/// Default T2 bounds (ms) of the model/search domain.
pub const SEARCH_T2: (f64, f64) = (4.0, 4000.0);
/// T1 bounds (ms) of the default demixing grids (insertion + stop check).
pub const DEMIX_T1: (f64, f64) = (10.0, 4000.0);
/// T2 bounds (ms) of the default demixing grids.
pub const DEMIX_T2: (f64, f64) = (4.0, 2000.0);

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2, "log_spaced needs hi > lo > 0, n >= 2");
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Recipe for a log-spaced rectangular (T1, T2) grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    pub t1_range: (f64, f64),
    pub t2_range: (f64, f64),
    pub n_t1: usize,
    pub n_t2: usize,
    /// Round axis values to integer milliseconds before filtering.
    pub round_ms: bool,
    /// Keep only T1 > T2 (strict); with `false`, T1 == T2 nodes survive the
    /// filter but are then nudged apart to stay constructible.
    pub strict: bool,
}

impl GridSpec {
    /// Demixing grid over [10, 4000] × [4, 2000] ms; `n` = 10 gives the
    /// 64-atom insertion grid, `n` = 60 the 2237-node stop-check grid.
    pub fn demix(n: usize) -> Self {
        GridSpec {
            t1_range: DEMIX_T1,
            t2_range: DEMIX_T2,
            n_t1: n,
            n_t2: n,
            round_ms: false,
            strict: true,
        }
    }

    /// Dictionary grid over the full model domain; `n` = 120 gives 8540 atoms.
    pub fn dictionary(n: usize) -> Self {
        GridSpec {
            t1_range: SEARCH_T1,
            t2_range: SEARCH_T2,
            n_t1: n,
            n_t2: n,
            round_ms: false,
            strict: true,
        }
    }

    /// Surrogate training grid: full domain, integer-rounded values, T1 ≥ T2.
    /// `n` = 400 gives 95143 samples, `n` = 130 gives 10043.
    pub fn training(n: usize) -> Self {
        GridSpec {
            t1_range: SEARCH_T1,
            t2_range: SEARCH_T2,
            n_t1: n,
            n_t2: n,
            round_ms: true,
            strict: false,
        }
    }

    pub fn build(&self) -> Result<ThetaGrid> {
        if self.n_t1 < 2 || self.n_t2 < 2 {
            return Err(Error::InvalidParam("grid needs at least 2 points per axis".into()));
        }
        for &(lo, hi) in [&self.t1_range, &self.t2_range] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidParam(format!(
                    "grid range ({lo}, {hi}) must satisfy 0 < lo < hi < inf"
                )));
            }
        }
        let round = |v: Vec<f64>| -> Vec<f64> {
            if self.round_ms {
                v.into_iter().map(f64::round).collect()
            } else {
                v
            }
        };
        let t1 = round(log_spaced(self.t1_range.0, self.t1_range.1, self.n_t1));
        let t2 = round(log_spaced(self.t2_range.0, self.t2_range.1, self.n_t2));
        let mut nodes = Vec::new();
        for &a in &t1 {
            for &b in &t2 {
                let keep = if self.strict { a > b } else { a >= b };
                if keep {
                    // On the rounded grid T1 == T2 can occur; Theta requires a
                    // strict gap, so nudge T2 down by the smallest useful
                    // amount rather than dropping the node.
                    let b = if a > b { b } else { b * (1.0 - 1e-9) };
                    nodes.push(Theta::new(a, b)?);
                }
            }
        }
        Ok(ThetaGrid { t1, t2, nodes })
    }
}

/// A realized grid: the two axes plus the filtered node list.
#[derive(Debug, Clone)]
pub struct ThetaGrid {
    t1: Vec<f64>,
    t2: Vec<f64>,
    nodes: Vec<Theta>,
}

impl ThetaGrid {
    pub fn t1_axis(&self) -> &[f64] {
        &self.t1
    }

    pub fn t2_axis(&self) -> &[f64] {
        &self.t2
    }

    pub fn nodes(&self) -> &[Theta] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest per-axis log step; the natural unit for exclusion radii.
    pub fn log_spacing(&self) -> f64 {
        let step = |ax: &[f64]| {
            ax.windows(2)
                .map(|w| (w[1] / w[0]).ln().abs())
                .fold(0.0_f64, f64::max)
        };
        step(&self.t1).max(step(&self.t2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_spacing_is_geometric() {
        let v = log_spaced(10.0, 1000.0, 3);
        assert!((v[0] - 10.0).abs() < 1e-12);
        assert!((v[1] - 100.0).abs() < 1e-9);
        assert!((v[2] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn published_atom_counts() {
        // These counts pin the exact grid conventions; a change in endpoint
        // handling, rounding, or the comparison direction breaks them.
        assert_eq!(GridSpec::demix(10).build().unwrap().len(), 64);
        assert_eq!(GridSpec::demix(40).build().unwrap().len(), 991);
        assert_eq!(GridSpec::demix(60).build().unwrap().len(), 2237);
        assert_eq!(GridSpec::dictionary(120).build().unwrap().len(), 8540);
        assert_eq!(GridSpec::training(130).build().unwrap().len(), 10043);
    }

    #[test]
    fn training_grid_full_scale_count() {
        assert_eq!(GridSpec::training(400).build().unwrap().len(), 95143);
    }

    #[test]
    fn nodes_respect_t1_gt_t2() {
        for g in [GridSpec::demix(10), GridSpec::training(25)] {
            for th in g.build().unwrap().nodes() {
                assert!(th.t1() > th.t2());
            }
        }
    }

    #[test]
    fn rejects_degenerate_ranges() {
        let mut g = GridSpec::demix(10);
        g.t1_range = (0.0, 100.0);
        assert!(g.build().is_err());
        let mut g = GridSpec::demix(10);
        g.n_t1 = 1;
        assert!(g.build().is_err());
    }
}
