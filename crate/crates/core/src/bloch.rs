//! Fingerprint simulation.
//!
//! The measured object per tissue is a time-series ("fingerprint") determined
//! by the relaxation pair θ = (T1, T2). Two simulators live here:
//!
//! - [`epg_fisp`]: an extended-phase-graph (EPG) simulation of an
//!   inversion-prepared, gradient-spoiled FISP train with a per-repetition
//!   flip-angle schedule. All RF pulses share one phase (taken about the
//!   y-axis), so the EPG states stay real and the signal is the signed
//!   transverse amplitude at the echo time.
//! - [`analytic_expo`]: the closed form `(1 − 2e^{−t/T1})·e^{−t/T2}` with its
//!   exact Jacobian — cheap, smooth, and handy wherever tests need a model
//!   that is independent of the EPG recursion.
//!
//! Solver-facing code never consumes raw fingerprints: the
//! [`FingerprintModel`] trait hands out unit-ℓ2-normalized responses and
//! Jacobians *of the normalized map* (quotient rule), so that downstream
//! operators see one consistent atom scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A relaxation parameter pair in milliseconds, with T1 > T2 > 0 enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    t1_ms: f64,
    t2_ms: f64,
}

impl Theta {
    pub fn new(t1_ms: f64, t2_ms: f64) -> Result<Self> {
        if t1_ms.is_finite() && t2_ms.is_finite() && t2_ms > 0.0 && t1_ms > t2_ms {
            Ok(Theta { t1_ms, t2_ms })
        } else {
            Err(Error::InvalidTheta { t1: t1_ms, t2: t2_ms })
        }
    }

    pub fn t1(&self) -> f64 {
        self.t1_ms
    }

    pub fn t2(&self) -> f64 {
        self.t2_ms
    }

    /// (ln T1, ln T2) — the coordinates every refinement step works in.
    pub fn ln(&self) -> [f64; 2] {
        [self.t1_ms.ln(), self.t2_ms.ln()]
    }

    pub fn from_ln(l: [f64; 2]) -> Result<Self> {
        Theta::new(l[0].exp(), l[1].exp())
    }

    /// Euclidean distance in (ln T1, ln T2).
    pub fn log_distance(&self, other: &Theta) -> f64 {
        let a = (self.t1_ms / other.t1_ms).ln();
        let b = (self.t2_ms / other.t2_ms).ln();
        a.hypot(b)
    }
}

/// Inversion-prepared FISP acquisition: one inversion pulse, a wait of
/// `ti_ms`, then one RF pulse per repetition with readout at `te_ms` and
/// an unbalanced (spoiling) gradient per `tr_ms`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FispSequence {
    /// Flip angle per repetition, radians.
    pub flip_rad: Vec<f64>,
    pub tr_ms: f64,
    pub te_ms: f64,
    pub ti_ms: f64,
    /// EPG configuration-state cap K (states of order ≥ K are dropped).
    /// The recursion is exact once K exceeds the repetition count; the
    /// default of 30 is the customary speed/accuracy trade-off and leaves a
    /// relative truncation error around 1e-6 for short-T2 tissue, growing
    /// toward 1e-2 at the long-T2 corner of the model domain.
    pub epg_order: usize,
}

/// Default EPG state cap.
pub const DEFAULT_EPG_ORDER: usize = 30;
/// Smallest accepted EPG state cap.
pub const MIN_EPG_ORDER: usize = 10;

impl FispSequence {
    /// Build from flip angles in degrees; fails on an empty train, a
    /// non-positive TE, TR ≤ TE, a negative TI, or flips outside [0°, 180°].
    pub fn new(flips_deg: &[f64], tr_ms: f64, te_ms: f64, ti_ms: f64) -> Result<Self> {
        if flips_deg.is_empty() {
            return Err(Error::InvalidSequence("empty flip-angle train".into()));
        }
        if !(te_ms > 0.0 && tr_ms > te_ms) {
            return Err(Error::InvalidSequence(format!(
                "need TR > TE > 0, got TR={tr_ms} ms, TE={te_ms} ms"
            )));
        }
        if !(ti_ms >= 0.0 && ti_ms.is_finite()) {
            return Err(Error::InvalidSequence(format!("bad TI={ti_ms} ms")));
        }
        if let Some(bad) = flips_deg.iter().find(|a| !(0.0..=180.0).contains(*a)) {
            return Err(Error::InvalidSequence(format!(
                "flip angle {bad}° outside [0°, 180°]"
            )));
        }
        Ok(FispSequence {
            flip_rad: flips_deg.iter().map(|a| a.to_radians()).collect(),
            tr_ms,
            te_ms,
            ti_ms,
            epg_order: DEFAULT_EPG_ORDER,
        })
    }

    pub fn with_epg_order(mut self, k: usize) -> Result<Self> {
        if k < MIN_EPG_ORDER {
            return Err(Error::InvalidParam(format!(
                "EPG state cap {k} below minimum {MIN_EPG_ORDER}"
            )));
        }
        self.epg_order = k;
        Ok(self)
    }

    /// Built-in synthetic schedule: `10° + 60°·sin²(π·t/250)` for
    /// t = 0..len−1 — a smooth 10°–70° ramp with period 250 — at the
    /// acquisition timing TR/TE/TI = 10/1.9/18 ms.
    pub fn synthetic(len: usize) -> Self {
        let flips: Vec<f64> = (0..len)
            .map(|t| {
                let s = (std::f64::consts::PI * t as f64 / 250.0).sin();
                10.0 + 60.0 * s * s
            })
            .collect();
        FispSequence::new(&flips, 10.0, 1.9, 18.0).expect("synthetic schedule is valid")
    }

    /// Repetition count T.
    pub fn len(&self) -> usize {
        self.flip_rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flip_rad.is_empty()
    }
}

/// EPG simulation of [`FispSequence`] at `theta`.
///
/// Returns the signed transverse amplitude at TE for each of the T
/// repetitions. Perfect inversion is assumed (Z ← −Z), followed by T1
/// recovery over TI; each repetition applies the RF rotation, reads the
/// zeroth transverse configuration attenuated by `e^{−TE/T2}`, relaxes over
/// the full TR, and shifts configuration orders by one (spoiler gradient).
pub fn epg_fisp(seq: &FispSequence, theta: &Theta) -> DVector<f64> {
    let k = seq.epg_order;
    let t_len = seq.len();
    // Real-valued EPG states: RF about y keeps F+, F-, Z real.
    let mut fp = vec![0.0_f64; k];
    let mut fm = vec![0.0_f64; k];
    let mut z = vec![0.0_f64; k];
    // Equilibrium, inversion, TI recovery: Z0 = 1 − 2·e^{−TI/T1}.
    z[0] = 1.0 - 2.0 * (-seq.ti_ms / theta.t1()).exp();

    let e1 = (-seq.tr_ms / theta.t1()).exp();
    let e2 = (-seq.tr_ms / theta.t2()).exp();
    let ete = (-seq.te_ms / theta.t2()).exp();

    let mut sig = DVector::zeros(t_len);
    let mut fp_next = vec![0.0_f64; k];
    let mut fm_next = vec![0.0_f64; k];
    let mut z_next = vec![0.0_f64; k];
    for (t, &a) in seq.flip_rad.iter().enumerate() {
        let (ca2, sa2) = {
            let h = 0.5 * a;
            (h.cos() * h.cos(), h.sin() * h.sin())
        };
        let sa = a.sin();
        let ca = a.cos();
        for j in 0..k {
            fp_next[j] = ca2 * fp[j] - sa2 * fm[j] + sa * z[j];
            fm_next[j] = -sa2 * fp[j] + ca2 * fm[j] + sa * z[j];
            z_next[j] = -0.5 * sa * (fp[j] + fm[j]) + ca * z[j];
        }
        std::mem::swap(&mut fp, &mut fp_next);
        std::mem::swap(&mut fm, &mut fm_next);
        std::mem::swap(&mut z, &mut z_next);

        sig[t] = fp[0] * ete;

        // Relaxation over TR, with Z0 recovering toward equilibrium.
        for j in 0..k {
            fp[j] *= e2;
            fm[j] *= e2;
            z[j] *= e1;
        }
        z[0] += 1.0 - e1;
        // Spoiler: transverse orders shift by one (F+ up, F− down); the new
        // zeroth F+ state is the conjugate of F−₁ — here simply its value,
        // everything being real.
        for j in (1..k).rev() {
            fp[j] = fp[j - 1];
        }
        for j in 0..k - 1 {
            fm[j] = fm[j + 1];
        }
        fm[k - 1] = 0.0;
        fp[0] = fm[0];
    }
    sig
}

/// Finite-difference Jacobian of [`epg_fisp`] with respect to (T1, T2) in
/// ms, using a relative step (`rel_step`, default 1e-4 — pass that value
/// unless you have a reason not to). Central differences are used wherever
/// both probes stay inside the T1 > T2 > 0 domain; close to the diagonal
/// the affected column degrades to a one-sided difference instead of
/// failing, since optimizers legitimately probe that boundary.
pub fn epg_fisp_jacobian(seq: &FispSequence, theta: &Theta, rel_step: f64) -> Result<DMatrix<f64>> {
    if !(rel_step > 0.0 && rel_step < 0.5) {
        return Err(Error::InvalidParam(format!("bad FD relative step {rel_step}")));
    }
    let mut jac = DMatrix::zeros(seq.len(), 2);
    let (t1, t2) = (theta.t1(), theta.t2());
    let steps = [rel_step * t1, rel_step * t2];
    let mut center: Option<DVector<f64>> = None;
    for (col, &h) in steps.iter().enumerate() {
        let (plus, minus) = if col == 0 {
            (Theta::new(t1 + h, t2), Theta::new(t1 - h, t2))
        } else {
            (Theta::new(t1, t2 + h), Theta::new(t1, t2 - h))
        };
        let column = match (plus, minus) {
            (Ok(p), Ok(m)) => (epg_fisp(seq, &p) - epg_fisp(seq, &m)) / (2.0 * h),
            (Ok(p), Err(_)) => {
                let c = center.get_or_insert_with(|| epg_fisp(seq, theta));
                (epg_fisp(seq, &p) - &*c) / h
            }
            (Err(_), Ok(m)) => {
                let c = center.get_or_insert_with(|| epg_fisp(seq, theta));
                (&*c - epg_fisp(seq, &m)) / h
            }
            (Err(e), Err(_)) => return Err(e),
        };
        jac.set_column(col, &column);
    }
    Ok(jac)
}

/// Closed-form exponential fingerprint on the sampling times `t_ms`:
/// `φ_n = (1 − 2e^{−t_n/T1})·e^{−t_n/T2}`, together with its exact Jacobian
/// (T×2, columns ∂/∂T1 and ∂/∂T2 in ms).
pub fn analytic_expo(t_ms: &[f64], theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
    let (t1, t2) = (theta.t1(), theta.t2());
    let mut f = DVector::zeros(t_ms.len());
    let mut jac = DMatrix::zeros(t_ms.len(), 2);
    for (n, &t) in t_ms.iter().enumerate() {
        let e1 = (-t / t1).exp();
        let e2 = (-t / t2).exp();
        f[n] = (1.0 - 2.0 * e1) * e2;
        jac[(n, 0)] = -2.0 * t / (t1 * t1) * e1 * e2;
        jac[(n, 1)] = (1.0 - 2.0 * e1) * e2 * t / (t2 * t2);
    }
    (f, jac)
}

/// Normalize `u` to unit ℓ2 and push its Jacobian through the quotient rule:
/// for n = u/‖u‖, J_n = (J − n·(nᵀJ))/‖u‖.
pub fn normalize_with_jacobian(u: &DVector<f64>, jac: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let norm = u.norm();
    assert!(norm > 0.0, "cannot normalize an all-zero fingerprint");
    let n = u / norm;
    let proj = &n * (n.transpose() * jac);
    ((u / norm), (jac - proj) / norm)
}

/// A map θ ↦ (unit-norm response, Jacobian of the normalized response).
///
/// Implementations: [`AnalyticExpo`] (exact Jacobian), [`EpgModel`]
/// (finite-difference Jacobian), and the MLP surrogate in
/// [`crate::surrogate`] (backprop Jacobian). The contract every consumer
/// relies on: `eval` has unit ℓ2 norm, and `jacobian` differentiates the
/// *normalized* map, so `evalᵀ·(jacobian column) ≈ 0`.
pub trait FingerprintModel: Sync {
    /// Output length (time points or compressed dimension).
    fn dim(&self) -> usize;

    /// Unit-ℓ2 response at `theta`.
    fn eval(&self, theta: &Theta) -> DVector<f64>;

    /// `dim × 2` Jacobian of the normalized response w.r.t. (T1, T2) in ms.
    fn jacobian(&self, theta: &Theta) -> DMatrix<f64>;

    /// Response and Jacobian together; override when the pair is cheaper
    /// than two separate calls.
    fn eval_jac(&self, theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
        (self.eval(theta), self.jacobian(theta))
    }
}

/// Closed-form exponential model (normalized), for tests and small studies.
#[derive(Debug, Clone)]
pub struct AnalyticExpo {
    pub t_ms: Vec<f64>,
}

impl AnalyticExpo {
    /// `len` samples uniformly spaced by `dt_ms`, starting at 0.
    pub fn uniform(len: usize, dt_ms: f64) -> Self {
        AnalyticExpo {
            t_ms: (0..len).map(|n| n as f64 * dt_ms).collect(),
        }
    }
}

impl FingerprintModel for AnalyticExpo {
    fn dim(&self) -> usize {
        self.t_ms.len()
    }

    fn eval(&self, theta: &Theta) -> DVector<f64> {
        let (f, _) = analytic_expo(&self.t_ms, theta);
        let norm = f.norm();
        f / norm
    }

    fn jacobian(&self, theta: &Theta) -> DMatrix<f64> {
        self.eval_jac(theta).1
    }

    fn eval_jac(&self, theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
        let (f, jac) = analytic_expo(&self.t_ms, theta);
        normalize_with_jacobian(&f, &jac)
    }
}

/// EPG simulation as a normalized model; the Jacobian is the quotient-rule
/// push-forward of the central finite-difference Jacobian of the raw signal.
#[derive(Debug, Clone)]
pub struct EpgModel {
    pub seq: FispSequence,
    /// Relative step for the finite-difference Jacobian.
    pub fd_rel_step: f64,
}

impl EpgModel {
    pub fn new(seq: FispSequence) -> Self {
        EpgModel { seq, fd_rel_step: 1e-4 }
    }
}

impl FingerprintModel for EpgModel {
    fn dim(&self) -> usize {
        self.seq.len()
    }

    fn eval(&self, theta: &Theta) -> DVector<f64> {
        let f = epg_fisp(&self.seq, theta);
        let norm = f.norm();
        f / norm
    }

    fn jacobian(&self, theta: &Theta) -> DMatrix<f64> {
        self.eval_jac(theta).1
    }

    fn eval_jac(&self, theta: &Theta) -> (DVector<f64>, DMatrix<f64>) {
        let f = epg_fisp(&self.seq, theta);
        let jac = epg_fisp_jacobian(&self.seq, theta, self.fd_rel_step)
            .expect("fd_rel_step must lie in (0, 0.5)");
        normalize_with_jacobian(&f, &jac)
    }
}
