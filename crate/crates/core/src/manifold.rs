//! Riemannian conjugate gradient on the product of unit circles
//! `{φ ∈ ℂⁿ : |φ_i| = 1}`.
//!
//! Gradients follow the real-inner-product convention: for a real cost `L`,
//! the Euclidean gradient `g` satisfies `dL = metric(g, dφ)`, so `‖φ − v‖²`
//! has gradient `2(φ − v)`.

use std::io::Write;

use crate::error::SolverError;
use crate::linalg::{CVec, C64};

/// Smallest modulus accepted by [`retract`].
pub const RETRACT_GUARD: f64 = 1e-30;

/// A point on the product of circles.
#[derive(Debug, Clone, PartialEq)]
pub struct CirclePoint(pub CVec);

impl CirclePoint {
    /// Normalizes every entry; zero entries become 1.
    pub fn from_vec(v: CVec) -> Self {
        CirclePoint(v.map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) }))
    }

    pub fn ones(n: usize) -> Self {
        CirclePoint(CVec::from_element(n, C64::new(1.0, 0.0)))
    }

    pub fn from_angles(angles: &[f64]) -> Self {
        CirclePoint(CVec::from_iterator(angles.len(), angles.iter().map(|&t| C64::from_polar(1.0, t))))
    }

    pub fn modulus_error(&self) -> f64 {
        modulus_error(&self.0)
    }
}

pub fn modulus_error(v: &CVec) -> f64 {
    v.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
}

/// `Re Σ x_j conj(y_j)`.
pub fn metric(x: &CVec, y: &CVec) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

/// `g − Re{conj(φ) ⊙ g} ⊙ φ`, evaluated as `j·Im{conj(φ) ⊙ g} ⊙ φ` for
/// unit-modulus `φ`.
pub fn tangent_project(phi: &CVec, g: &CVec) -> CVec {
    CVec::from_iterator(
        g.len(),
        phi.iter().zip(g.iter()).map(|(p, x)| {
            let t = (p.conj() * x).im;
            C64::new(-t * p.im, t * p.re)
        }),
    )
}

/// Largest `|Re(ψ_j conj(φ_j))|`; zero for tangent vectors.
pub fn tangency_residual(phi: &CVec, psi: &CVec) -> f64 {
    phi.iter().zip(psi.iter()).map(|(p, x)| (x * p.conj()).re.abs()).fold(0.0, f64::max)
}

fn scale(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm()).fold(1.0, f64::max)
}

fn projection_drift(phi: &CVec, projected: &CVec) -> f64 {
    let again = tangent_project(phi, projected);
    again.iter().zip(projected.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale(projected)
}

fn scaled_tangency(phi: &CVec, psi: &CVec) -> f64 {
    tangency_residual(phi, psi) / scale(psi)
}

/// Entrywise `(φ + d)/|φ + d|`; `None` when some entry collapses to zero.
pub fn retract(phi: &CVec, step: &CVec) -> Option<CVec> {
    let mut out = CVec::zeros(phi.len());
    for (i, (p, d)) in phi.iter().zip(step.iter()).enumerate() {
        let z = p + d;
        let n = z.norm();
        if !(n >= RETRACT_GUARD) || !n.is_finite() {
            return None;
        }
        out[i] = z / n;
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub shrink: f64,
    /// Armijo slope parameter.
    pub rho1: f64,
    /// Curvature parameter, checked and logged only.
    pub rho2: f64,
    pub max_shrinks: usize,
    /// Steepest-descent reset period; `None` uses the dimension.
    pub reset_every: Option<usize>,
}

impl Default for RcgConfig {
    fn default() -> Self {
        RcgConfig {
            grad_tol: 1e-4,
            max_iters: 500,
            initial_step: 1.0,
            shrink: 0.5,
            rho1: 1e-4,
            rho2: 0.9,
            max_shrinks: 60,
            reset_every: None,
        }
    }
}

impl RcgConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.rho1 && self.rho1 < self.rho2 && self.rho2 < 1.0) {
            return Err("need 0 < rho1 < rho2 < 1".into());
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err("shrink must lie in (0, 1)".into());
        }
        if !(self.initial_step > 0.0) || !(self.grad_tol >= 0.0) {
            return Err("initial_step must be positive and grad_tol non-negative".into());
        }
        Ok(())
    }
}

/// One accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgStep {
    pub iter: usize,
    /// Cost after the step.
    pub cost: f64,
    /// Riemannian gradient norm after the step.
    pub grad_norm: f64,
    pub step: f64,
    pub wolfe2_ok: bool,
    /// `metric(grad, d)` at the start of the step (negative).
    pub slope: f64,
    /// Cosine between the negative gradient and the search direction.
    pub cos_angle: f64,
    /// Gradient norm before the step.
    pub prev_grad_norm: f64,
    /// Fletcher–Reeves coefficient used to form the direction (0 on resets).
    pub fr_beta: f64,
    /// Squared Riemannian gradient norm after the step.
    pub grad_norm_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcgStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcgTrace {
    pub initial_cost: f64,
    pub initial_grad_norm: f64,
    pub steps: Vec<RcgStep>,
    pub status: RcgStatus,
    pub restarts: usize,
    /// Largest `||φ_i| − 1|` over every accepted iterate.
    pub max_modulus_error: f64,
    /// Largest tangency residual over every projected gradient and direction,
    /// divided by `max(1, ‖ψ‖∞)`.
    pub max_tangency_residual: f64,
    /// Largest `‖P(P(g)) − P(g)‖∞ / max(1, ‖P(g)‖∞)` over the projected gradients.
    pub max_projection_drift: f64,
}

impl RcgTrace {
    pub fn final_cost(&self) -> f64 {
        self.steps.last().map_or(self.initial_cost, |s| s.cost)
    }

    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// CSV with columns `iter,cost,grad_norm,step,wolfe2_ok`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "cost", "grad_norm", "step", "wolfe2_ok"])?;
        for s in &self.steps {
            w.write_record([
                s.iter.to_string(),
                s.cost.to_string(),
                s.grad_norm.to_string(),
                s.step.to_string(),
                s.wolfe2_ok.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimizes `cost` over the product of circles from `phi0`.
///
/// `egrad` returns the Euclidean gradient in the convention of the module
/// docs. Each iterate is projected back onto the circles.
pub fn rcg_minimize<F, G>(
    mut cost: F,
    mut egrad: G,
    phi0: &CVec,
    cfg: &RcgConfig,
) -> Result<(CVec, RcgTrace), SolverError>
where
    F: FnMut(&CVec) -> f64,
    G: FnMut(&CVec) -> CVec,
{
    let n = phi0.len();
    let reset_every = cfg.reset_every.unwrap_or(n).max(1);
    let mut phi = CirclePoint::from_vec(phi0.clone()).0;
    let mut f = cost(&phi);
    let mut grad = tangent_project(&phi, &egrad(&phi));
    let mut gnorm2 = metric(&grad, &grad);
    if !f.is_finite() || !gnorm2.is_finite() {
        return Err(SolverError::NonFinite { iter: 0 });
    }
    let mut trace = RcgTrace {
        initial_cost: f,
        initial_grad_norm: gnorm2.sqrt(),
        steps: Vec::new(),
        status: RcgStatus::MaxIters,
        restarts: 0,
        max_modulus_error: modulus_error(&phi),
        max_tangency_residual: scaled_tangency(&phi, &grad),
        max_projection_drift: projection_drift(&phi, &grad),
    };
    if n == 0 || gnorm2.sqrt() <= cfg.grad_tol {
        trace.status = RcgStatus::Converged;
        return Ok((phi, trace));
    }
    let mut dir = -grad.clone();
    let mut fr_beta = 0.0;
    let mut since_reset = 0usize;
    let mut steepest = true;

    let mut iter = 0usize;
    while iter < cfg.max_iters {
        let mut slope = metric(&grad, &dir);
        if slope >= 0.0 {
            dir = -grad.clone();
            fr_beta = 0.0;
            since_reset = 0;
            steepest = true;
            slope = -gnorm2;
        }
        let dnorm = dir.norm();

        // backtracking Armijo
        let mut alpha = cfg.initial_step;
        let mut accepted = None;
        for _ in 0..=cfg.max_shrinks {
            if let Some(cand) = retract(&phi, &(&dir * C64::from(alpha))) {
                let fc = cost(&cand);
                if !fc.is_finite() {
                    return Err(SolverError::NonFinite { iter });
                }
                if fc <= f + cfg.rho1 * alpha * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            alpha *= cfg.shrink;
        }

        let Some((next, f_next)) = accepted else {
            if steepest {
                trace.status = RcgStatus::LineSearchFailed;
                return Ok((phi, trace));
            }
            trace.restarts += 1;
            dir = -grad.clone();
            fr_beta = 0.0;
            since_reset = 0;
            steepest = true;
            continue;
        };

        let grad_next = tangent_project(&next, &egrad(&next));
        let gnorm2_next = metric(&grad_next, &grad_next);
        if !gnorm2_next.is_finite() {
            return Err(SolverError::NonFinite { iter });
        }
        let transported = tangent_project(&next, &dir);
        trace.max_modulus_error = trace.max_modulus_error.max(modulus_error(&next));
        trace.max_tangency_residual = trace
            .max_tangency_residual
            .max(scaled_tangency(&next, &grad_next))
            .max(scaled_tangency(&next, &transported));
        trace.max_projection_drift = trace.max_projection_drift.max(projection_drift(&next, &grad_next));
        let wolfe2_ok = metric(&grad_next, &transported).abs() <= cfg.rho2 * slope.abs();
        let cos_angle = if dnorm > 0.0 { -slope / (gnorm2.sqrt() * dnorm) } else { 0.0 };
        trace.steps.push(RcgStep {
            iter,
            cost: f_next,
            grad_norm: gnorm2_next.sqrt(),
            step: alpha,
            wolfe2_ok,
            slope,
            cos_angle,
            prev_grad_norm: gnorm2.sqrt(),
            fr_beta,
            grad_norm_sq: gnorm2_next,
        });

        iter += 1;
        since_reset += 1;
        let beta = gnorm2_next / gnorm2;
        phi = next;
        f = f_next;
        grad = grad_next;
        gnorm2 = gnorm2_next;
        if gnorm2.sqrt() <= cfg.grad_tol {
            trace.status = RcgStatus::Converged;
            return Ok((phi, trace));
        }
        if since_reset >= reset_every {
            dir = -grad.clone();
            fr_beta = 0.0;
            since_reset = 0;
            steepest = true;
        } else {
            dir = &transported * C64::from(beta) - &grad;
            fr_beta = beta;
            steepest = false;
        }
    }
    Ok((phi, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Step indices whose cost exceeds the previous one by more than the tolerance.
    pub increases: Vec<usize>,
    /// Steps whose decrease falls short of `ρ₁ α |slope|`.
    pub armijo_violations: Vec<usize>,
    /// `Σ cos²θ_i ‖grad_i‖²` over the trace.
    pub zoutendijk_sum: f64,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.increases.is_empty() && self.armijo_violations.is_empty() && self.zoutendijk_sum.is_finite()
    }
}

/// Monotonicity and sufficient-decrease audit of an RCG trace.
pub fn convergence_diagnostics(trace: &RcgTrace, rho1: f64) -> ConvergenceReport {
    let mut increases = Vec::new();
    let mut armijo_violations = Vec::new();
    let mut prev = trace.initial_cost;
    let mut zoutendijk_sum = 0.0;
    for (i, s) in trace.steps.iter().enumerate() {
        let tol = 1e-12 * prev.abs().max(1.0);
        if s.cost > prev + tol {
            increases.push(i);
        }
        if prev - s.cost < rho1 * s.step * s.slope.abs() - tol {
            armijo_violations.push(i);
        }
        zoutendijk_sum += s.cos_angle.powi(2) * s.prev_grad_norm.powi(2);
        prev = s.cost;
    }
    ConvergenceReport { increases, armijo_violations, zoutendijk_sum }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cis, complex_gaussian, max_abs_diff, CMat};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from_fn(n, |_, _| complex_gaussian(rng, 1.0))
    }

    fn random_point(n: usize, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from_fn(n, |_, _| cis(rng.random_range(-PI..PI)))
    }

    #[test]
    fn metric_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_vec(5, &mut rng);
        assert!((metric(&v, &v) - v.norm_squared()).abs() < 1e-12);
        let phi = random_point(5, &mut rng);
        assert!(metric(&phi, &(&phi * C64::i())).abs() < 1e-15);
        let w = random_vec(5, &mut rng);
        let mut oracle = 0.0;
        for j in 0..5 {
            oracle += (v[j] * w[j].conj()).re;
        }
        assert!((metric(&v, &w) - oracle).abs() < 1e-12);
        assert_eq!(metric(&v, &w), metric(&w, &v));
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_point(6, &mut rng);
        assert!(tangent_project(&phi, &phi).norm() < 1e-15);
        let t = &phi * C64::i();
        assert!((tangent_project(&phi, &t) - &t).norm() < 1e-15);
        let g = random_vec(6, &mut rng);
        let psi = tangent_project(&phi, &g);
        assert!(tangency_residual(&phi, &psi) < 1e-12);
    }

    #[test]
    fn retraction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_point(4, &mut rng);
        assert_eq!(retract(&phi, &CVec::zeros(4)).unwrap(), phi);
        let one = CVec::from_element(1, C64::new(1.0, 0.0));
        let r = retract(&one, &CVec::from_element(1, C64::i())).unwrap();
        assert!((r[0] - cis(PI / 4.0)).norm() < 1e-15);
        let d = random_vec(4, &mut rng);
        let r = retract(&phi, &d).unwrap();
        for j in 0..4 {
            assert!((r[j].norm() - 1.0).abs() < 1e-15);
            assert!((r[j].arg() - (phi[j] + d[j]).arg()).abs() < 1e-12);
        }
        assert!(retract(&one, &(-&one)).is_none());
    }

    #[test]
    fn analytic_cost_converges_to_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_point(12, &mut rng);
        let (phi, trace) = rcg_minimize(
            |p| (p - &v).norm_squared(),
            |p| (p - &v) * C64::from(2.0),
            &CVec::from_element(12, C64::new(1.0, 0.0)),
            &RcgConfig { grad_tol: 1e-10, ..Default::default() },
        )
        .unwrap();
        assert!(trace.final_cost() < 1e-8);
        assert!(max_abs_diff(&phi, &v) < 1e-4);
        assert!(convergence_diagnostics(&trace, 1e-4).passed());
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let v = CVec::from_element(3, cis(0.3));
        let (phi, trace) =
            rcg_minimize(|p| (p - &v).norm_squared(), |p| (p - &v) * C64::from(2.0), &v, &RcgConfig::default()).unwrap();
        assert_eq!(trace.iterations(), 0);
        assert_eq!(trace.status, RcgStatus::Converged);
        assert_eq!(phi, v);
    }

    #[test]
    fn two_dim_quadratic_beats_phase_grid() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let a = CMat::from_fn(2, 2, |_, _| complex_gaussian(&mut rng, 1.0));
            let q = &a * a.adjoint();
            let b = random_vec(2, &mut rng);
            let cost = |p: &CVec| -> f64 { (p.dotc(&(&q * p))).re + 2.0 * b.dotc(p).re };
            let grad = |p: &CVec| -> CVec { (&q * p) * C64::from(2.0) + &b * C64::from(2.0) };
            let mut best = f64::INFINITY;
            let k = 720;
            for i in 0..k {
                for j in 0..k {
                    let p = CirclePoint::from_angles(&[
                        2.0 * PI * i as f64 / k as f64,
                        2.0 * PI * j as f64 / k as f64,
                    ])
                    .0;
                    best = best.min(cost(&p));
                }
            }
            // slack: grid resolution times the largest gradient magnitude on the circles
            let lip = 2.0 * (q.norm() + b.norm());
            let slack = lip * (PI / k as f64) * 2f64.sqrt();
            let starts = [CVec::from_element(2, C64::new(1.0, 0.0)), random_point(2, &mut rng), random_point(2, &mut rng)];
            let found = starts
                .iter()
                .map(|s| rcg_minimize(cost, grad, s, &RcgConfig { grad_tol: 1e-9, ..Default::default() }).unwrap().1.final_cost())
                .fold(f64::INFINITY, f64::min);
            assert!(found <= best + slack, "seed {seed}: {found} > {best} + {slack}");
        }
    }

    #[test]
    fn retraction_first_order_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = CMat::from_fn(4, 4, |_, _| complex_gaussian(&mut rng, 1.0));
        let q = &a * a.adjoint();
        let cost = |p: &CVec| (p.dotc(&(&q * p))).re;
        let phi = random_point(4, &mut rng);
        let grad = tangent_project(&phi, &((&q * &phi) * C64::from(2.0)));
        let d = tangent_project(&phi, &random_vec(4, &mut rng));
        let expect = metric(&grad, &d);
        for h in [1e-6, 1e-7] {
            let fd = (cost(&retract(&phi, &(&d * C64::from(h))).unwrap()) - cost(&phi)) / h;
            assert!((fd - expect).abs() <= 1e-4 * expect.abs().max(1e-3), "{fd} vs {expect}");
        }
    }

    #[test]
    fn diagnostics_flag_exact_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random_point(5, &mut rng);
        let (_, mut trace) = rcg_minimize(
            |p| (p - &v).norm_squared(),
            |p| (p - &v) * C64::from(2.0),
            &random_point(5, &mut rng),
            &RcgConfig { grad_tol: 1e-12, ..Default::default() },
        )
        .unwrap();
        assert!(trace.steps.len() > 3);
        assert!(convergence_diagnostics(&trace, 1e-4).increases.is_empty());
        let prev = trace.steps[1].cost;
        trace.steps[2].cost = prev + 1.0;
        let rep = convergence_diagnostics(&trace, 1e-4);
        assert_eq!(rep.increases, vec![2]);
        assert!(!rep.passed());
    }

    #[test]
    fn fletcher_reeves_ratio_matches_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = CMat::from_fn(6, 6, |_, _| complex_gaussian(&mut rng, 1.0));
        let q = &a * a.adjoint();
        let (_, trace) = rcg_minimize(
            |p| (p.dotc(&(&q * p))).re,
            |p| (&q * p) * C64::from(2.0),
            &random_point(6, &mut rng),
            &RcgConfig { reset_every: Some(1000), ..Default::default() },
        )
        .unwrap();
        let mut checked = 0;
        for w in trace.steps.windows(3) {
            if w[2].fr_beta != 0.0 {
                assert_eq!(w[2].fr_beta, w[1].grad_norm_sq / w[0].grad_norm_sq);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn armijo_record_satisfies_decrease() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = CMat::from_fn(5, 5, |_, _| complex_gaussian(&mut rng, 1.0));
            let q = -(&a * a.adjoint());
            let (_, trace) = rcg_minimize(
                |p| (p.dotc(&(&q * p))).re,
                |p| (&q * p) * C64::from(2.0),
                &random_point(5, &mut rng),
                &RcgConfig::default(),
            )
            .unwrap();
            let rep = convergence_diagnostics(&trace, 1e-4);
            assert!(rep.passed(), "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn non_finite_cost_aborts() {
        let r = rcg_minimize(|_| f64::NAN, |p| p.clone(), &CVec::from_element(2, C64::new(1.0, 0.0)), &RcgConfig::default());
        assert!(matches!(r, Err(SolverError::NonFinite { .. })));
    }

    #[test]
    fn trace_csv_columns() {
        let v = CVec::from_element(2, cis(1.0));
        let (_, trace) = rcg_minimize(
            |p| (p - &v).norm_squared(),
            |p| (p - &v) * C64::from(2.0),
            &CVec::from_element(2, C64::new(1.0, 0.0)),
            &RcgConfig::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,cost,grad_norm,step,wolfe2_ok\n"));
        assert_eq!(text.lines().count(), trace.steps.len() + 1);
    }

    #[test]
    fn config_validation() {
        assert!(RcgConfig::default().validate().is_ok());
        assert!(RcgConfig { rho1: 0.95, ..Default::default() }.validate().is_err());
        assert!(RcgConfig { shrink: 1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn projection_idempotent(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_point(7, &mut rng);
            let g = random_vec(7, &mut rng);
            let p1 = tangent_project(&phi, &g);
            let p2 = tangent_project(&phi, &p1);
            prop_assert!(max_abs_diff(&p1, &p2) < 1e-12);
        }

        #[test]
        fn retraction_stays_on_circles(seed in 0u64..10_000, scale in 0.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_point(7, &mut rng);
            let d = random_vec(7, &mut rng) * C64::from(scale);
            if let Some(r) = retract(&phi, &d) {
                prop_assert!(modulus_error(&r) < 1e-12);
            }
        }
    }
}
