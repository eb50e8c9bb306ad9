//! Vector-valued spike measures and the operators around them.
//!
//! The unknown in the demixing problem is a nonnegative vector measure
//! m = Σ_s c_s·δ_{θ_s}: each spike carries a location θ_s = (T1, T2) and a
//! per-voxel weight vector c_s ∈ R^v_{≥0}. The forward operator stacks the
//! normalized fingerprints of the spike locations into A ∈ R^{τ×k} and maps
//! the measure to the data matrix A·W, where row s of W ∈ R^{k×v} holds the
//! weights of spike s across voxels.
//!
//! The regularizer is the sparse-group penalty
//! α·Σ_s [(1−β)·‖c_s‖₁ + β·√v·‖c_s‖₂], which interpolates between a plain
//! ℓ1 penalty on all weights (β = 0, voxels decouple) and a group penalty
//! that switches whole spikes on or off (β = 1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bloch::{FingerprintModel, Theta};
use crate::{Error, Result};

/// One spike: a location in (T1, T2) and nonnegative per-voxel weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub theta: Theta,
    /// Weight of this tissue in each voxel (length v, nonnegative).
    pub weights: DVector<f64>,
}

impl Spike {
    pub fn group_norm(&self) -> f64 {
        self.weights.norm()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.sum()
    }
}

/// A finite nonnegative vector measure over (T1, T2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeMeasure {
    n_voxels: usize,
    spikes: Vec<Spike>,
}

impl SpikeMeasure {
    pub fn empty(n_voxels: usize) -> Self {
        SpikeMeasure { n_voxels, spikes: Vec::new() }
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn spikes(&self) -> &[Spike] {
        &self.spikes
    }

    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }

    /// Add a spike; the weight vector must have length `n_voxels` and no
    /// negative or non-finite entries.
    pub fn push(&mut self, spike: Spike) -> Result<()> {
        if spike.weights.len() != self.n_voxels {
            return Err(Error::DimMismatch(format!(
                "spike has {} weights, measure has {} voxels",
                spike.weights.len(),
                self.n_voxels
            )));
        }
        if spike.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParam(
                "spike weights must be finite and nonnegative".into(),
            ));
        }
        self.spikes.push(spike);
        Ok(())
    }

    /// Insert a spike with all-zero weights (the state right before a
    /// weight-update pass).
    pub fn push_zero(&mut self, theta: Theta) {
        self.spikes.push(Spike {
            theta,
            weights: DVector::zeros(self.n_voxels),
        });
    }

    pub fn thetas(&self) -> Vec<Theta> {
        self.spikes.iter().map(|s| s.theta).collect()
    }

    /// Weights as a k×v matrix; row s is spike s across voxels.
    pub fn weight_rows(&self) -> DMatrix<f64> {
        let k = self.spikes.len();
        let mut w = DMatrix::zeros(k, self.n_voxels);
        for (s, spike) in self.spikes.iter().enumerate() {
            w.row_mut(s).copy_from(&spike.weights.transpose());
        }
        w
    }

    /// Overwrite all weights from a k×v matrix (row s = spike s).
    pub fn set_weight_rows(&mut self, w: &DMatrix<f64>) -> Result<()> {
        if w.nrows() != self.spikes.len() || w.ncols() != self.n_voxels {
            return Err(Error::DimMismatch(format!(
                "weight matrix is {}×{}, expected {}×{}",
                w.nrows(),
                w.ncols(),
                self.spikes.len(),
                self.n_voxels
            )));
        }
        for (s, spike) in self.spikes.iter_mut().enumerate() {
            spike.weights = w.row(s).transpose();
        }
        Ok(())
    }

    /// Replace locations and weights together; `thetas.len()` must equal
    /// `w.nrows()`.
    pub fn set_support(&mut self, thetas: &[Theta], w: &DMatrix<f64>) -> Result<()> {
        if thetas.len() != w.nrows() || w.ncols() != self.n_voxels {
            return Err(Error::DimMismatch(format!(
                "{} locations with {}×{} weights for {} voxels",
                thetas.len(),
                w.nrows(),
                w.ncols(),
                self.n_voxels
            )));
        }
        self.spikes = thetas
            .iter()
            .zip(w.row_iter())
            .map(|(&theta, row)| Spike { theta, weights: row.transpose() })
            .collect();
        Ok(())
    }

    /// Drop spikes whose weight vector has ℓ2 norm below `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.spikes.retain(|s| s.group_norm() >= tol);
    }

    /// Stack the model responses of all spike locations into τ×k.
    pub fn atom_matrix(&self, model: &dyn FingerprintModel) -> DMatrix<f64> {
        atom_matrix(model, &self.thetas())
    }

    /// Synthesize the data matrix A·W ∈ R^{τ×v}.
    pub fn forward(&self, model: &dyn FingerprintModel) -> DMatrix<f64> {
        if self.is_empty() {
            return DMatrix::zeros(model.dim(), self.n_voxels);
        }
        self.atom_matrix(model) * self.weight_rows()
    }

    /// Merge groups of spikes that sit within `tol` of each other in
    /// (ln T1, ln T2). Each group collapses to one spike with summed
    /// weights, located at the group-norm-weighted centroid in log
    /// coordinates. Repeats until no pair is closer than `tol`, so applying
    /// the function twice changes nothing.
    pub fn merge_close(&mut self, tol: f64) {
        loop {
            let k = self.spikes.len();
            if k < 2 {
                return;
            }
            // Union-find over spikes within tol of each other.
            let mut parent: Vec<usize> = (0..k).collect();
            fn find(parent: &mut Vec<usize>, i: usize) -> usize {
                if parent[i] != i {
                    let r = find(parent, parent[i]);
                    parent[i] = r;
                }
                parent[i]
            }
            let mut any = false;
            for i in 0..k {
                for j in i + 1..k {
                    if self.spikes[i].theta.log_distance(&self.spikes[j].theta) <= tol {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        if ri != rj {
                            parent[ri] = rj;
                            any = true;
                        }
                    }
                }
            }
            if !any {
                return;
            }
            let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for i in 0..k {
                let r = find(&mut parent, i);
                groups.entry(r).or_default().push(i);
            }
            let mut merged = Vec::with_capacity(groups.len());
            for (_, members) in groups {
                let mut weights = DVector::zeros(self.n_voxels);
                let mut lnc = [0.0_f64; 2];
                let mut mass = 0.0;
                for &i in &members {
                    let s = &self.spikes[i];
                    weights += &s.weights;
                    let w = s.group_norm();
                    let l = s.theta.ln();
                    lnc[0] += w * l[0];
                    lnc[1] += w * l[1];
                    mass += w;
                }
                let theta = if mass > 0.0 {
                    Theta::from_ln([lnc[0] / mass, lnc[1] / mass])
                        .unwrap_or(self.spikes[members[0]].theta)
                } else {
                    self.spikes[members[0]].theta
                };
                merged.push(Spike { theta, weights });
            }
            self.spikes = merged;
        }
    }
}

/// Responses of `model` at each location, stacked as columns (τ×k).
/// Evaluations run in parallel when the list is large.
pub fn atom_matrix(model: &dyn FingerprintModel, thetas: &[Theta]) -> DMatrix<f64> {
    use rayon::prelude::*;
    let mut a = DMatrix::zeros(model.dim(), thetas.len());
    if thetas.len() >= 64 {
        let cols: Vec<DVector<f64>> = thetas.par_iter().map(|th| model.eval(th)).collect();
        for (s, col) in cols.into_iter().enumerate() {
            a.set_column(s, &col);
        }
    } else {
        for (s, th) in thetas.iter().enumerate() {
            a.set_column(s, &model.eval(th));
        }
    }
    a
}

/// The adjoint of the synthesis operator, evaluated at one location:
/// η(θ) ∈ R^v with η_i = ⟨φ(θ), r_i⟩ for residual columns r_i. Satisfies
/// ⟨A·W, R⟩_F = Σ_s ⟨row_s(W), adjoint_eval(model, R, θ_s)⟩.
pub fn adjoint_eval(model: &dyn FingerprintModel, residual: &DMatrix<f64>, theta: &Theta) -> DVector<f64> {
    residual.tr_mul(&model.eval(theta))
}

/// Penalty weights for the sparse-group objective
/// ½‖X − Φm‖²_F + α·Σ_s [(1−β)‖c_s‖₁ + β√v‖c_s‖₂].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgtvParams {
    pub alpha: f64,
    pub beta: f64,
    pub n_voxels: usize,
}

impl SgtvParams {
    pub fn new(alpha: f64, beta: f64, n_voxels: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParam(format!("alpha must be positive, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParam(format!("beta must lie in [0, 1], got {beta}")));
        }
        if n_voxels == 0 {
            return Err(Error::InvalidParam("n_voxels must be positive".into()));
        }
        Ok(SgtvParams { alpha, beta, n_voxels })
    }

    /// Coefficient of the elementwise ℓ1 part: α(1−β).
    pub fn lambda1(&self) -> f64 {
        self.alpha * (1.0 - self.beta)
    }

    /// Coefficient of the per-spike ℓ2 part: αβ√v.
    pub fn lambda2(&self) -> f64 {
        self.alpha * self.beta * (self.n_voxels as f64).sqrt()
    }

    /// Penalty contribution of one weight vector.
    pub fn spike_penalty(&self, weights: &DVector<f64>) -> f64 {
        self.lambda1() * weights.iter().map(|w| w.abs()).sum::<f64>() + self.lambda2() * weights.norm()
    }
}

/// Total penalty α·‖m‖_β of a measure.
pub fn sgtv_norm(m: &SpikeMeasure, p: &SgtvParams) -> f64 {
    m.spikes().iter().map(|s| p.spike_penalty(&s.weights)).sum()
}

/// Full objective ½‖X − Φm‖²_F + α‖m‖_β.
pub fn sgb_objective(
    x: &DMatrix<f64>,
    model: &dyn FingerprintModel,
    m: &SpikeMeasure,
    p: &SgtvParams,
) -> f64 {
    let resid = x - m.forward(model);
    0.5 * resid.norm_squared() + sgtv_norm(m, p)
}

/// Per-compartment quantitative maps on an nx×ny raster: each compartment
/// has one (T1, T2) location and a weight image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tsmi {
    pub nx: usize,
    pub ny: usize,
    pub thetas: Vec<Theta>,
    /// k×(nx·ny): row s is the weight image of compartment s, voxel index
    /// i = y·nx + x.
    pub weights: DMatrix<f64>,
}

impl Tsmi {
    pub fn new(nx: usize, ny: usize, thetas: Vec<Theta>, weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != thetas.len() || weights.ncols() != nx * ny {
            return Err(Error::DimMismatch(format!(
                "{} locations, {}×{} weights, {}×{} raster",
                thetas.len(),
                weights.nrows(),
                weights.ncols(),
                nx,
                ny
            )));
        }
        Ok(Tsmi { nx, ny, thetas, weights })
    }

    pub fn from_measure(m: &SpikeMeasure, nx: usize, ny: usize) -> Result<Self> {
        if nx * ny != m.n_voxels() {
            return Err(Error::DimMismatch(format!(
                "raster {nx}×{ny} does not match {} voxels",
                m.n_voxels()
            )));
        }
        Tsmi::new(nx, ny, m.thetas(), m.weight_rows())
    }

    pub fn to_measure(&self) -> SpikeMeasure {
        let mut m = SpikeMeasure::empty(self.nx * self.ny);
        m.set_support(&self.thetas, &self.weights)
            .expect("dimensions validated at construction");
        m
    }

    pub fn n_compartments(&self) -> usize {
        self.thetas.len()
    }

    pub fn weight_at(&self, compartment: usize, x: usize, y: usize) -> f64 {
        self.weights[(compartment, y * self.nx + x)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::AnalyticExpo;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_measure(rng: &mut ChaCha8Rng, k: usize, v: usize) -> SpikeMeasure {
        let mut m = SpikeMeasure::empty(v);
        for _ in 0..k {
            let t1 = rng.gen_range(100.0..3000.0);
            let t2 = rng.gen_range(10.0..0.8 * t1);
            let w = DVector::from_fn(v, |_, _| rng.gen_range(0.0..2.0));
            m.push(Spike { theta: Theta::new(t1, t2).unwrap(), weights: w }).unwrap();
        }
        m
    }

    #[test]
    fn push_validates_dimensions_and_signs() {
        let mut m = SpikeMeasure::empty(4);
        let th = Theta::new(800.0, 80.0).unwrap();
        assert!(m.push(Spike { theta: th, weights: DVector::zeros(3) }).is_err());
        assert!(m
            .push(Spike { theta: th, weights: DVector::from_vec(vec![1.0, -0.1, 0.0, 0.0]) })
            .is_err());
        assert!(m
            .push(Spike { theta: th, weights: DVector::from_vec(vec![1.0, 0.1, 0.0, 0.0]) })
            .is_ok());
    }

    #[test]
    fn forward_matches_manual_sum() {
        let model = AnalyticExpo::uniform(30, 25.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_measure(&mut rng, 3, 5);
        let x = m.forward(&model);
        let mut manual = DMatrix::zeros(30, 5);
        for s in m.spikes() {
            let atom = model.eval(&s.theta);
            for i in 0..5 {
                for n in 0..30 {
                    manual[(n, i)] += atom[n] * s.weights[i];
                }
            }
        }
        assert_relative_eq!((x - manual).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn adjoint_identity_holds() {
        // ⟨Φm, R⟩_F must equal Σ_s ⟨c_s, η(θ_s)⟩ to near machine precision.
        let model = AnalyticExpo::uniform(40, 18.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let k = 1 + (trial % 4);
            let v = 1 + (trial % 7);
            let m = random_measure(&mut rng, k, v);
            let r = DMatrix::from_fn(40, v, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = (m.forward(&model)).dot(&r);
            let rhs: f64 = m
                .spikes()
                .iter()
                .map(|s| s.weights.dot(&adjoint_eval(&model, &r, &s.theta)))
                .sum();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-10, max_relative = 1e-12);
        }
    }

    #[test]
    fn penalty_limits_and_hand_value() {
        let w = DVector::from_vec(vec![3.0, 4.0]);
        let pure_l1 = SgtvParams::new(0.5, 0.0, 2).unwrap();
        assert_relative_eq!(pure_l1.spike_penalty(&w), 0.5 * 7.0);
        let pure_group = SgtvParams::new(0.5, 1.0, 2).unwrap();
        assert_relative_eq!(pure_group.spike_penalty(&w), 0.5 * 2.0_f64.sqrt() * 5.0);
        let mixed = SgtvParams::new(2.0, 0.25, 4).unwrap();
        // λ1 = 2·0.75 = 1.5, λ2 = 2·0.25·2 = 1.0 → 1.5·7 + 1.0·5 = 15.5
        assert_relative_eq!(mixed.lambda1(), 1.5);
        assert_relative_eq!(mixed.lambda2(), 1.0);
        let w4 = DVector::from_vec(vec![3.0, 4.0, 0.0, 0.0]);
        assert_relative_eq!(mixed.spike_penalty(&w4), 15.5);
    }

    #[test]
    fn params_validation() {
        assert!(SgtvParams::new(0.0, 0.5, 4).is_err());
        assert!(SgtvParams::new(1.0, -0.1, 4).is_err());
        assert!(SgtvParams::new(1.0, 1.1, 4).is_err());
        assert!(SgtvParams::new(1.0, 0.5, 0).is_err());
        assert!(SgtvParams::new(1.0, 0.0, 4).is_ok());
        assert!(SgtvParams::new(1.0, 1.0, 4).is_ok());
    }

    #[test]
    fn merge_combines_nearby_and_is_idempotent() {
        let mut m = SpikeMeasure::empty(2);
        let w = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
        m.push(Spike { theta: Theta::new(800.0, 80.0).unwrap(), weights: w(1.0, 0.0) }).unwrap();
        m.push(Spike { theta: Theta::new(800.4, 80.02).unwrap(), weights: w(0.5, 0.5) }).unwrap();
        m.push(Spike { theta: Theta::new(2000.0, 300.0).unwrap(), weights: w(0.0, 2.0) }).unwrap();
        let total_before = m.spikes().iter().map(Spike::total_weight).sum::<f64>();
        m.merge_close(1e-2);
        assert_eq!(m.len(), 2);
        let total_after = m.spikes().iter().map(Spike::total_weight).sum::<f64>();
        assert_relative_eq!(total_before, total_after, epsilon = 1e-12);
        let snapshot = m.clone();
        m.merge_close(1e-2);
        assert_eq!(m, snapshot);
    }

    #[test]
    fn merge_centroid_sits_between_parents() {
        let mut m = SpikeMeasure::empty(1);
        m.push(Spike {
            theta: Theta::new(1000.0, 100.0).unwrap(),
            weights: DVector::from_vec(vec![1.0]),
        })
        .unwrap();
        m.push(Spike {
            theta: Theta::new(1010.0, 101.0).unwrap(),
            weights: DVector::from_vec(vec![1.0]),
        })
        .unwrap();
        m.merge_close(0.1);
        assert_eq!(m.len(), 1);
        let th = m.spikes()[0].theta;
        assert!(th.t1() > 1000.0 && th.t1() < 1010.0);
        assert!(th.t2() > 100.0 && th.t2() < 101.0);
        assert_relative_eq!(m.spikes()[0].weights[0], 2.0);
    }

    #[test]
    fn prune_drops_tiny_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = random_measure(&mut rng, 3, 4);
        let th = Theta::new(500.0, 50.0).unwrap();
        m.push(Spike { theta: th, weights: DVector::from_element(4, 1e-14) }).unwrap();
        m.prune(1e-10);
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn weight_roundtrip_via_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = random_measure(&mut rng, 4, 6);
        let w = m.weight_rows();
        let mut m2 = m.clone();
        m2.set_weight_rows(&w).unwrap();
        assert_eq!(m, m2);
        let bad = DMatrix::zeros(3, 6);
        assert!(m.set_weight_rows(&bad).is_err());
    }

    #[test]
    fn objective_zero_measure_is_half_data_energy() {
        let model = AnalyticExpo::uniform(20, 30.0);
        let x = DMatrix::from_fn(20, 3, |n, i| ((n + i) as f64 * 0.37).sin());
        let m = SpikeMeasure::empty(3);
        let p = SgtvParams::new(0.1, 0.5, 3).unwrap();
        assert_relative_eq!(sgb_objective(&x, &model, &m, &p), 0.5 * x.norm_squared());
    }

    #[test]
    fn tsmi_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_measure(&mut rng, 2, 12);
        let t = Tsmi::from_measure(&m, 4, 3).unwrap();
        assert_eq!(t.n_compartments(), 2);
        assert_eq!(t.to_measure(), m);
        assert_relative_eq!(t.weight_at(0, 1, 2), m.spikes()[0].weights[2 * 4 + 1]);
        assert!(Tsmi::from_measure(&m, 5, 3).is_err());
    }
}
