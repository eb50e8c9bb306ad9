//! Dual-certificate analysis of a spike configuration.
//!
//! Whether a ground-truth mixture is recoverable by the sparse-group
//! program (in the low-noise, small-α regime) is governed by a dual
//! certificate: a matrix Q ∈ R^{τ×v} whose interpolation values at the true
//! spikes are pinned while its associated landscape stays strictly below
//! the admissible level everywhere else. This module builds the least-norm
//! *precertificate* — the minimum-Frobenius-norm Q satisfying the
//! interpolation and stationarity conditions — and inspects its landscape
//!
//! ```text
//! β > 0:  g(θ) = ‖(Qᵀφ(θ) + β − 1)₊‖₂² / (v·β²)
//! β = 0:  g(θ) = maxᵢ ⟨φ(θ), qᵢ⟩   (per-voxel scalar certificates)
//! ```
//!
//! The configuration is reported nondegenerate when three clauses hold:
//! the landscape stays below 1 (+tol) away from the spikes, the
//! finite-difference Hessian of g at every spike is negative definite, and
//! g at the spikes themselves does not overshoot 1 (+tol) — the last clause
//! catches closely spaced spikes whose interpolation constraints conflict
//! across voxels even though each separately fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::bloch::{FingerprintModel, Theta};
use crate::grid::GridSpec;
use crate::measure::{atom_matrix, SpikeMeasure};
use crate::{Error, Result};

/// A spike configuration to analyze: locations plus the k×v weight matrix
/// (row s = spike s across voxels).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub thetas: Vec<Theta>,
    pub weights: DMatrix<f64>,
}

impl GroundTruth {
    pub fn new(thetas: Vec<Theta>, weights: DMatrix<f64>) -> Result<Self> {
        if thetas.is_empty() || weights.nrows() != thetas.len() || weights.ncols() == 0 {
            return Err(Error::DimMismatch(format!(
                "{} locations with {}×{} weights",
                thetas.len(),
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParam("weights must be finite and nonnegative".into()));
        }
        for s in 0..weights.nrows() {
            if weights.row(s).iter().all(|&w| w == 0.0) {
                return Err(Error::InvalidParam(format!("spike {s} has no support voxel")));
            }
        }
        Ok(GroundTruth { thetas, weights })
    }

    pub fn from_measure(m: &SpikeMeasure) -> Result<Self> {
        GroundTruth::new(m.thetas(), m.weight_rows())
    }

    pub fn n_voxels(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_spikes(&self) -> usize {
        self.thetas.len()
    }
}

/// Least-norm precertificate for one configuration.
#[derive(Debug, Clone)]
pub struct Precertificate {
    pub beta: f64,
    /// τ×v dual matrix; column i belongs to voxel i.
    pub q: DMatrix<f64>,
    /// Relative residual of the interpolation/stationarity constraints.
    pub constraint_residual: f64,
}

impl Precertificate {
    /// Landscape value from a precomputed (unit-norm) atom.
    pub fn g_from_atom(&self, atom: &DVector<f64>) -> f64 {
        let eta = self.q.tr_mul(atom); // v
        if self.beta > 0.0 {
            let v = self.q.ncols() as f64;
            let s: f64 = eta
                .iter()
                .map(|&e| {
                    let p: f64 = e + self.beta - 1.0;
                    (p.max(0.0)).powi(2)
                })
                .sum();
            s / (v * self.beta * self.beta)
        } else {
            eta.max()
        }
    }

    /// Landscape value at a location.
    pub fn g(&self, model: &dyn FingerprintModel, theta: &Theta) -> f64 {
        self.g_from_atom(&model.eval(theta))
    }
}

/// Minimum-norm solve of M·x = b via SVD with a relative cutoff.
fn least_norm_solve(m: DMatrix<f64>, b: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let b_norm = b.norm();
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err(Error::Numerical("constraint matrix is zero".into()));
    }
    let x = svd
        .solve(&b, 1e-10 * smax)
        .map_err(|e| Error::Numerical(format!("certificate solve failed: {e}")))?;
    let resid = (&m * &x - &b).norm() / b_norm.max(1e-300);
    Ok((x.column(0).into_owned(), resid))
}

/// Build the least-norm precertificate of `truth` under mixing `beta`.
///
/// For β > 0 the constraints on Q are, with ĉ_s = c_s/‖c_s‖₂:
/// ⟨φ(θ_s), q_i⟩ = (1−β) + β√v·ĉ_si for every support entry (s, i), and
/// Σᵢ ĉ_si·J_φ(θ_s)ᵀq_i = 0 per spike. For β = 0 each voxel gets its own
/// least-norm vector with ⟨φ(θ_s), q⟩ = 1 and J_φ(θ_s)ᵀq = 0 over its own
/// support; voxels sharing a support pattern share the solution.
pub fn solve_precertificate(
    model: &dyn FingerprintModel,
    truth: &GroundTruth,
    beta: f64,
) -> Result<Precertificate> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParam(format!("beta = {beta} outside [0, 1]")));
    }
    let (k, v) = (truth.n_spikes(), truth.n_voxels());
    let tau = model.dim();
    let atoms: Vec<DVector<f64>> = truth.thetas.iter().map(|t| model.eval(t)).collect();
    let jacs: Vec<DMatrix<f64>> = truth.thetas.iter().map(|t| model.jacobian(t)).collect();

    if beta > 0.0 {
        // One joint system over vec(Q) (columns stacked: x[i·τ + t] = Q[t,i]).
        let sqrt_v = (v as f64).sqrt();
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for s in 0..k {
            let c = truth.weights.row(s);
            let cn = c.norm();
            for i in 0..v {
                if c[i] > 0.0 {
                    let entries = (0..tau).map(|t| (i * tau + t, atoms[s][t])).collect();
                    rows.push((entries, (1.0 - beta) + beta * sqrt_v * c[i] / cn));
                }
            }
            for d in 0..2 {
                let mut entries = Vec::new();
                for i in 0..v {
                    if c[i] > 0.0 {
                        let w = c[i] / cn;
                        for t in 0..tau {
                            entries.push((i * tau + t, w * jacs[s][(t, d)]));
                        }
                    }
                }
                rows.push((entries, 0.0));
            }
        }
        let m_rows = rows.len();
        let mut m = DMatrix::zeros(m_rows, tau * v);
        let mut b = DVector::zeros(m_rows);
        for (r, (entries, rhs)) in rows.into_iter().enumerate() {
            for (c, val) in entries {
                m[(r, c)] = val;
            }
            b[r] = rhs;
        }
        let (x, resid) = least_norm_solve(m, b)?;
        let q = DMatrix::from_column_slice(tau, v, x.as_slice());
        Ok(Precertificate { beta, q, constraint_residual: resid })
    } else {
        // Per-voxel scalar certificates, deduplicated by support pattern.
        let mut classes: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for i in 0..v {
            let pattern: Vec<usize> =
                (0..k).filter(|&s| truth.weights[(s, i)] > 0.0).collect();
            if !pattern.is_empty() {
                classes.entry(pattern).or_default().push(i);
            }
        }
        if classes.is_empty() {
            return Err(Error::InvalidParam("no voxel has support".into()));
        }
        let mut q = DMatrix::zeros(tau, v);
        let mut worst = 0.0_f64;
        for (pattern, voxels) in classes {
            let rows = pattern.len() * 3;
            let mut m = DMatrix::zeros(rows, tau);
            let mut b = DVector::zeros(rows);
            for (j, &s) in pattern.iter().enumerate() {
                m.row_mut(3 * j).copy_from(&atoms[s].transpose());
                b[3 * j] = 1.0;
                m.row_mut(3 * j + 1).copy_from(&jacs[s].column(0).transpose());
                m.row_mut(3 * j + 2).copy_from(&jacs[s].column(1).transpose());
            }
            let (x, resid) = least_norm_solve(m, b)?;
            worst = worst.max(resid);
            for &i in &voxels {
                q.set_column(i, &x);
            }
        }
        Ok(Precertificate { beta, q, constraint_residual: worst })
    }
}

/// Evaluate the landscape over a grid (parallel over nodes).
pub fn raster_g(
    pc: &Precertificate,
    model: &dyn FingerprintModel,
    nodes: &[Theta],
) -> Vec<f64> {
    let a = atom_matrix(model, nodes); // τ×n
    let eta = pc.q.tr_mul(&a); // v×n
    if pc.beta > 0.0 {
        let v = pc.q.ncols() as f64;
        eta.column_iter()
            .map(|col| {
                col.iter()
                    .map(|&e| {
                        let p: f64 = e + pc.beta - 1.0;
                        (p.max(0.0)).powi(2)
                    })
                    .sum::<f64>()
                    / (v * pc.beta * pc.beta)
            })
            .collect()
    } else {
        eta.column_iter().map(|col| col.max()).collect()
    }
}

/// Options for [`check_nondegeneracy`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CertificateOptions {
    /// Raster used for the off-support scan.
    pub grid: GridSpec,
    /// Exclusion radius around each spike, in units of the raster's log
    /// spacing.
    pub exclusion_cells: f64,
    /// Slack on the admissible level 1.
    pub tol: f64,
    /// Central-difference step (in ln θ) for the spike Hessians.
    pub hessian_step: f64,
    /// Hessian eigenvalues must fall below this (strictly negative) level.
    pub hessian_eig_tol: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            grid: GridSpec::demix(60),
            exclusion_cells: 3.0,
            tol: 1e-6,
            hessian_step: 1e-3,
            hessian_eig_tol: -1e-10,
        }
    }
}

/// Overall verdict of a certificate check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// All three clauses hold: the configuration is stably identifiable.
    Nondegenerate,
    /// At least one clause fails.
    Degenerate,
    /// The constraint system could not be satisfied; the landscape is
    /// meaningless and no verdict is possible.
    RankDeficient,
}

/// Full result of [`check_nondegeneracy`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub verdict: Verdict,
    /// Largest g over raster nodes outside all exclusion balls.
    pub max_g_off_support: f64,
    pub argmax_off_support: Option<Theta>,
    /// g at each spike location.
    pub spike_g: Vec<f64>,
    /// Eigenvalues of the FD Hessian of g at each spike (ascending).
    pub hessian_eigs: Vec<[f64; 2]>,
    pub constraint_residual: f64,
    /// Human-readable clause failures (empty iff nondegenerate).
    pub failures: Vec<String>,
}

/// FD Hessian of the landscape in (ln T1, ln T2), eigenvalues ascending.
fn hessian_eigs_at(
    pc: &Precertificate,
    model: &dyn FingerprintModel,
    theta: &Theta,
    h: f64,
) -> [f64; 2] {
    let l = theta.ln();
    let at = |d0: f64, d1: f64| -> f64 {
        let th = Theta::from_ln([l[0] + d0, l[1] + d1]).expect("step stays inside the domain");
        pc.g(model, &th)
    };
    let g0 = at(0.0, 0.0);
    let h00 = (at(h, 0.0) - 2.0 * g0 + at(-h, 0.0)) / (h * h);
    let h11 = (at(0.0, h) - 2.0 * g0 + at(0.0, -h)) / (h * h);
    let h01 = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
    // Symmetric 2×2 eigenvalues.
    let tr = h00 + h11;
    let det = h00 * h11 - h01 * h01;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    [tr / 2.0 - disc, tr / 2.0 + disc]
}

/// Three-clause nondegeneracy check of `truth` under `beta`.
pub fn check_nondegeneracy(
    model: &dyn FingerprintModel,
    truth: &GroundTruth,
    beta: f64,
    opts: &CertificateOptions,
) -> Result<CertificateReport> {
    let pc = solve_precertificate(model, truth, beta)?;
    let mut failures = Vec::new();

    if pc.constraint_residual > 1e-8 {
        return Ok(CertificateReport {
            verdict: Verdict::RankDeficient,
            max_g_off_support: f64::NAN,
            argmax_off_support: None,
            spike_g: Vec::new(),
            hessian_eigs: Vec::new(),
            constraint_residual: pc.constraint_residual,
            failures: vec![format!(
                "interpolation system unsatisfiable (relative residual {:.3e})",
                pc.constraint_residual
            )],
        });
    }

    let grid = opts.grid.build()?;
    let radius = opts.exclusion_cells * grid.log_spacing();
    let g_all = raster_g(&pc, model, grid.nodes());
    let mut max_off = f64::NEG_INFINITY;
    let mut argmax = None;
    for (node, &g) in grid.nodes().iter().zip(&g_all) {
        if truth.thetas.iter().any(|t| node.log_distance(t) <= radius) {
            continue;
        }
        if g > max_off {
            max_off = g;
            argmax = Some(*node);
        }
    }
    if !(max_off < 1.0 + opts.tol) {
        failures.push(format!(
            "landscape reaches {max_off:.6} away from the spikes (limit 1 + {:.0e})",
            opts.tol
        ));
    }

    let spike_g: Vec<f64> = truth.thetas.iter().map(|t| pc.g(model, t)).collect();
    for (s, &g) in spike_g.iter().enumerate() {
        if !(g <= 1.0 + opts.tol) {
            failures.push(format!("g overshoots at spike {s}: {g:.6}"));
        }
    }

    let hessian_eigs: Vec<[f64; 2]> = truth
        .thetas
        .iter()
        .map(|t| hessian_eigs_at(&pc, model, t, opts.hessian_step))
        .collect();
    for (s, eigs) in hessian_eigs.iter().enumerate() {
        if !(eigs[1] < opts.hessian_eig_tol) {
            failures.push(format!(
                "curvature at spike {s} not negative definite (eigenvalues {:.3e}, {:.3e})",
                eigs[0], eigs[1]
            ));
        }
    }

    let verdict = if failures.is_empty() {
        Verdict::Nondegenerate
    } else {
        Verdict::Degenerate
    };
    Ok(CertificateReport {
        verdict,
        max_g_off_support: max_off,
        argmax_off_support: argmax,
        spike_g,
        hessian_eigs,
        constraint_residual: pc.constraint_residual,
        failures,
    })
}
