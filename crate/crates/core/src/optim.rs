//! Bounded smooth minimization.
//!
//! Spike-location refinement and certificate scans need a small, reliable
//! minimizer for smooth functions over simple convex sets (boxes, and the
//! T2 < T1 half-space in log coordinates). This module provides a projected
//! L-BFGS: limited-memory quasi-Newton directions, a projected Armijo
//! backtracking line search, and curvature-filtered memory updates. The
//! search never returns a point worse than its start — callers use that to
//! make refinement steps safe to apply unconditionally.

use nalgebra::DVector;
use std::collections::VecDeque;

/// A Euclidean projection onto a closed convex set.
pub trait Projection: Sync {
    fn project(&self, x: &mut DVector<f64>);

    fn projected(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        self.project(&mut y);
        y
    }
}

/// Axis-aligned box `lo ≤ x ≤ hi`.
#[derive(Debug, Clone)]
pub struct BoxProjection {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BoxProjection {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a <= b), "empty box");
        BoxProjection { lo, hi }
    }
}

impl Projection for BoxProjection {
    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

/// The whole space (no constraint).
#[derive(Debug, Clone, Copy)]
pub struct NoProjection;

impl Projection for NoProjection {
    fn project(&self, _x: &mut DVector<f64>) {}
}

/// Options for [`minimize_projected`].
#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when ‖x − proj(x − ∇f)‖ falls below this.
    pub tol_proj_grad: f64,
    /// Stop when the accepted step is shorter than this.
    pub tol_step: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Maximum halvings in the backtracking search.
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 200,
            tol_proj_grad: 1e-10,
            tol_step: 1e-14,
            c1: 1e-4,
            max_backtracks: 50,
        }
    }
}

/// Outcome of a [`minimize_projected`] run.
#[derive(Debug, Clone, Copy)]
pub struct LbfgsReport {
    pub iterations: usize,
    /// True when the projected-gradient or step tolerance was met (rather
    /// than the iteration cap or a stalled line search).
    pub converged: bool,
    pub objective: f64,
    /// ‖x − proj(x − ∇f(x))‖ at the returned point.
    pub proj_grad_norm: f64,
}

/// Projected Armijo search with a weak-Wolfe expansion phase.
///
/// Backtracks from t = 1 to the first point satisfying sufficient decrease,
/// then doubles t while the directional slope at the endpoint remains
/// steeper than 0.9× the starting slope (negative curvature along the
/// step) and the decrease condition keeps holding. Without the expansion,
/// valley-following problems produce steps with sᵀy ≤ 0 whose curvature
/// pairs must be discarded, the memory goes stale, and progress stalls at
/// tiny step sizes.
fn line_search<F>(
    fg: &mut F,
    proj: &dyn Projection,
    x: &DVector<f64>,
    fx: f64,
    gx: &DVector<f64>,
    d: &DVector<f64>,
    opts: &LbfgsOptions,
) -> Option<(DVector<f64>, f64, DVector<f64>, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    const C2: f64 = 0.9;
    let mut t = 1.0;
    let mut accepted = None;
    for _ in 0..opts.max_backtracks {
        let xt = proj.projected(&(x + d * t));
        let dx = &xt - x;
        if dx.norm() == 0.0 {
            break;
        }
        let (ft, gt) = fg(&xt);
        if ft <= fx + opts.c1 * gx.dot(&dx) && ft <= fx {
            accepted = Some((xt, ft, gt, dx));
            break;
        }
        t *= 0.5;
    }
    let (mut xt, mut ft, mut gt, mut dx) = accepted?;
    for _ in 0..opts.max_backtracks {
        if gt.dot(&dx) >= C2 * gx.dot(&dx) {
            break;
        }
        let t2 = t * 2.0;
        let x2 = proj.projected(&(x + d * t2));
        let dx2 = &x2 - x;
        if (&dx2 - &dx).norm() == 0.0 {
            break; // the projection absorbed the extension
        }
        let (f2, g2) = fg(&x2);
        if f2 <= fx + opts.c1 * gx.dot(&dx2) && f2 <= ft {
            xt = x2;
            ft = f2;
            gt = g2;
            dx = dx2;
            t = t2;
        } else {
            break;
        }
    }
    Some((xt, ft, gt, dx))
}

/// Minimize a smooth function over a convex set by projected L-BFGS.
///
/// `fg` returns the objective and its gradient. The returned point is
/// always feasible and never has a larger objective than the projection of
/// `x0`.
pub fn minimize_projected<F>(
    mut fg: F,
    x0: DVector<f64>,
    proj: &dyn Projection,
    opts: &LbfgsOptions,
) -> (DVector<f64>, LbfgsReport)
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = proj.projected(&x0);
    let (mut fx, mut gx) = fg(&x);
    let mut mem: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new(); // (s, y, 1/yᵀs)
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..opts.max_iters {
        // Projected-gradient chord: a feasible descent direction for any
        // convex set, and its norm is the first-order stationarity measure.
        let pg_dir = proj.projected(&(&x - &gx)) - &x;
        let pg = pg_dir.norm();
        if pg <= opts.tol_proj_grad {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion for d = −H·g.
        let mut d = -&gx;
        if !mem.is_empty() {
            let mut alphas = Vec::with_capacity(mem.len());
            for (s, y, rho) in mem.iter().rev() {
                let a = rho * s.dot(&d);
                d -= y * a;
                alphas.push(a);
            }
            let (s_last, y_last, _) = mem.back().unwrap();
            let gamma = s_last.dot(y_last) / y_last.norm_squared();
            d *= gamma;
            for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
                let b = rho * y.dot(&d);
                d += s * (a - b);
            }
        }
        if d.dot(&gx) >= 0.0 {
            // Not a descent direction — drop the memory and fall back.
            mem.clear();
            d = -&gx;
        }

        let mut accepted = line_search(&mut fg, proj, &x, fx, &gx, &d, opts);
        // Near an active constraint the quasi-Newton direction can point
        // almost entirely out of the feasible set, leaving a microscopic
        // projected step while first-order progress is still available.
        // Detect that and retry along the projected-gradient chord, which
        // always admits a step commensurate with the stationarity measure.
        let degenerate = accepted
            .as_ref()
            .map_or(true, |(_, _, _, dx)| dx.norm() < 1e-6 * pg);
        if degenerate {
            mem.clear();
            if let Some(alt) = line_search(&mut fg, proj, &x, fx, &gx, &pg_dir, opts) {
                let better = match &accepted {
                    None => true,
                    Some((_, ft, _, _)) => alt.1 < *ft,
                };
                if better {
                    accepted = Some(alt);
                }
            }
        }

        let Some((xt, ft, gt, dx)) = accepted else {
            break; // line search stalled: x is the best point seen
        };
        let step_norm = dx.norm();
        let y = &gt - &gx;
        let sy = dx.dot(&y);
        if sy > 1e-10 * step_norm * y.norm() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((dx, y, 1.0 / sy));
        }
        x = xt;
        fx = ft;
        gx = gt;
        if step_norm <= opts.tol_step {
            break; // converged is decided by the stationarity check below
        }
    }

    let proj_grad_norm = (proj.projected(&(&x - &gx)) - &x).norm();
    if proj_grad_norm <= opts.tol_proj_grad {
        converged = true;
    }
    (
        x,
        LbfgsReport {
            iterations,
            converged,
            objective: fx,
            proj_grad_norm,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_projection_clamps() {
        let b = BoxProjection::new(
            DVector::from_vec(vec![0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        );
        let p = b.projected(&DVector::from_vec(vec![2.0, -3.0]));
        assert_eq!(p, DVector::from_vec(vec![1.0, -1.0]));
    }

    #[test]
    fn quadratic_unconstrained_minimum() {
        // f(x) = ½Σ dᵢ(xᵢ−cᵢ)², interior optimum.
        let c = DVector::from_vec(vec![0.3, -0.7, 2.0]);
        let d = DVector::from_vec(vec![1.0, 10.0, 0.1]);
        let fg = |x: &DVector<f64>| {
            let r = x - &c;
            let f = 0.5 * r.iter().zip(d.iter()).map(|(ri, di)| di * ri * ri).sum::<f64>();
            let g = DVector::from_fn(3, |i, _| d[i] * r[i]);
            (f, g)
        };
        let (x, rep) =
            minimize_projected(fg, DVector::zeros(3), &NoProjection, &LbfgsOptions::default());
        assert!(rep.converged);
        assert!((x - &c).norm() < 1e-8, "report {rep:?}");
    }

    #[test]
    fn quadratic_box_clamps_to_face() {
        // Separable quadratic: constrained optimum is the clamped center.
        let c = DVector::from_vec(vec![1.8, -0.4, 0.5]);
        let fg = |x: &DVector<f64>| {
            let r = x - &c;
            (0.5 * r.norm_squared(), r.clone())
        };
        let b = BoxProjection::new(DVector::zeros(3), DVector::from_element(3, 1.0));
        let (x, rep) =
            minimize_projected(fg, DVector::from_element(3, 0.5), &b, &LbfgsOptions::default());
        assert!(rep.converged);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-9);
        assert_relative_eq!(x[2], 0.5, epsilon = 1e-9);
    }

    fn rosenbrock(x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (a, b) = (1.0, 100.0);
        let f = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
        let g = DVector::from_vec(vec![
            -2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]),
            2.0 * b * (x[1] - x[0] * x[0]),
        ]);
        (f, g)
    }

    #[test]
    fn rosenbrock_unconstrained() {
        let opts = LbfgsOptions { max_iters: 500, ..Default::default() };
        let (x, rep) =
            minimize_projected(rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &NoProjection, &opts);
        assert!(rep.objective < 1e-12, "report {rep:?}");
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn rosenbrock_box_excluding_optimum() {
        // Box caps x₀ at 0.5; along that face the objective is minimized at
        // x₁ = x₀² = 0.25.
        let b = BoxProjection::new(
            DVector::from_vec(vec![-2.0, -2.0]),
            DVector::from_vec(vec![0.5, 2.0]),
        );
        let opts = LbfgsOptions { max_iters: 500, ..Default::default() };
        let (x, _) =
            minimize_projected(rosenbrock, DVector::from_vec(vec![-1.0, -1.0]), &b, &opts);
        assert_relative_eq!(x[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(x[1], 0.25, epsilon = 1e-6);
    }

    #[test]
    fn never_returns_worse_than_start() {
        // A ridge with many poor directions; whatever happens, the final
        // objective cannot exceed the starting one.
        let fg = |x: &DVector<f64>| {
            let f = x[0].sin() * 5.0 + x[0] * x[0] * 0.01 + (x[1] - 3.0).powi(2);
            let g = DVector::from_vec(vec![
                x[0].cos() * 5.0 + 0.02 * x[0],
                2.0 * (x[1] - 3.0),
            ]);
            (f, g)
        };
        for start in [[0.0, 0.0], [1.5, -2.0], [-4.0, 7.0]] {
            let x0 = DVector::from_vec(start.to_vec());
            let f0 = fg(&x0).0;
            let (_, rep) =
                minimize_projected(fg, x0, &NoProjection, &LbfgsOptions::default());
            assert!(rep.objective <= f0 + 1e-12);
        }
    }

    #[test]
    fn start_outside_box_is_projected_first() {
        let b = BoxProjection::new(DVector::zeros(2), DVector::from_element(2, 1.0));
        let fg = |x: &DVector<f64>| (x.norm_squared(), x * 2.0);
        let (x, rep) =
            minimize_projected(fg, DVector::from_vec(vec![5.0, -5.0]), &b, &LbfgsOptions::default());
        assert!(rep.converged);
        assert!(x.norm() < 1e-9);
    }

    #[test]
    fn respects_iteration_cap() {
        let opts = LbfgsOptions { max_iters: 3, ..Default::default() };
        let (_, rep) = minimize_projected(
            rosenbrock,
            DVector::from_vec(vec![-1.2, 1.0]),
            &NoProjection,
            &opts,
        );
        assert!(rep.iterations <= 3);
    }
}
