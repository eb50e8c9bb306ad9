//! Independent reference implementations ("oracles") used by the acceptance
//! suite. Everything here is deliberately written from first principles —
//! projected gradient instead of closed forms, finite differences instead of
//! backpropagation — so agreement with the library is evidence, not
//! tautology.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgb_core::bloch::{FingerprintModel, Theta};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Minimize `½‖z − c‖² + τ1·Σzᵢ + τ2·‖z‖₂` over `z ≥ 0` by projected
/// gradient descent with Armijo backtracking.
///
/// The zero solution is handled by its optimality condition — `z = 0` is the
/// minimizer iff `‖(c − τ1)₊‖₂ ≤ τ2` (take the subgradient `u = (c − τ1)₊`
/// of the ℓ2 term at 0) — because gradient steps only creep toward the
/// origin, where the ℓ2 gradient is undefined. Away from zero the objective
/// is smooth and 1-strongly convex, so plain projected gradient converges;
/// the routine checks its own first-order residual and panics rather than
/// return an unconverged answer.
pub fn prox_oracle_vec(c: &DVector<f64>, tau1: f64, tau2: f64) -> DVector<f64> {
    let shifted = c.map(|x| (x - tau1).max(0.0));
    if shifted.norm() <= tau2 {
        return DVector::zeros(c.len());
    }

    let objective = |z: &DVector<f64>| -> f64 {
        0.5 * (z - c).norm_squared() + tau1 * z.sum() + tau2 * z.norm()
    };
    let mut z = shifted;
    let mut f = objective(&z);
    let mut step = 0.5_f64;
    for _ in 0..200_000 {
        let grad = &z - c + DVector::from_element(c.len(), tau1) + &z * (tau2 / z.norm());
        // Armijo backtracking on the projected step.
        let mut accepted = None;
        for _ in 0..60 {
            let cand = (&z - &grad * step).map(|x| x.max(0.0));
            let fc = objective(&cand);
            let diff = &cand - &z;
            if fc <= f + grad.dot(&diff) + diff.norm_squared() / (2.0 * step) {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let (cand, fc) = accepted.expect("backtracking failed to find a descent step");
        let moved = (&cand - &z).amax();
        z = cand;
        f = fc;
        step = (step * 2.0).min(0.9);
        if moved <= 1e-14 * (1.0 + z.amax()) {
            break;
        }
    }

    // First-order optimality: z must be a fixed point of the unit projected
    // gradient step.
    let grad = &z - c + DVector::from_element(c.len(), tau1) + &z * (tau2 / z.norm());
    let residual = (&z - &(&z - &grad).map(|x| x.max(0.0))).amax();
    assert!(
        residual <= 1e-9 * (1.0 + c.amax()),
        "prox oracle did not converge: residual {residual:.3e}"
    );
    z
}

/// [`prox_oracle_vec`] applied to each row of a k×v matrix.
pub fn prox_oracle_rows(c: &DMatrix<f64>, tau1: f64, tau2: f64) -> DMatrix<f64> {
    let mut out = c.clone();
    for (r, row) in c.row_iter().enumerate() {
        let z = prox_oracle_vec(&row.transpose(), tau1, tau2);
        out.row_mut(r).copy_from(&z.transpose());
    }
    out
}

/// Central finite-difference Jacobian of `model.eval` with respect to
/// (T1, T2) in milliseconds, step `rel` relative to each coordinate.
pub fn fd_jacobian(model: &dyn FingerprintModel, theta: &Theta, rel: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(model.dim(), 2);
    let coords = [theta.t1(), theta.t2()];
    for d in 0..2 {
        let h = rel * coords[d];
        let mut plus = coords;
        let mut minus = coords;
        plus[d] += h;
        minus[d] -= h;
        let fp = model.eval(&Theta::new(plus[0], plus[1]).unwrap());
        let fm = model.eval(&Theta::new(minus[0], minus[1]).unwrap());
        jac.set_column(d, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Relative Frobenius deviation ‖a − b‖ / ‖b‖.
pub fn rel_err_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// A θ drawn log-uniformly from the interior of the given box (a `margin`
/// fraction away from each edge in log space), rejecting T1 ≤ T2.
pub fn random_theta(
    rng: &mut ChaCha8Rng,
    t1_range: (f64, f64),
    t2_range: (f64, f64),
    margin: f64,
) -> Theta {
    let span = |lo: f64, hi: f64| {
        let (a, b) = (lo.ln(), hi.ln());
        let pad = margin * (b - a);
        (a + pad, b - pad)
    };
    let (a1, b1) = span(t1_range.0, t1_range.1);
    let (a2, b2) = span(t2_range.0, t2_range.1);
    loop {
        let t1 = rng.gen_range(a1..b1).exp();
        let t2 = rng.gen_range(a2..b2).exp();
        if t1 > t2 * 1.05 {
            return Theta::new(t1, t2).unwrap();
        }
    }
}
