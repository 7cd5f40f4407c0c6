//! Riemannian conjugate gradient on unit-modulus vectors: fit the phases of
//! a target vector and check the convergence diagnostics.

use cfdfrc::linalg::{CVec, C64};
use cfdfrc::manifold::{convergence_diagnostics, modulus_error, rcg_minimize, RcgConfig};

fn main() {
    let v = CVec::from_fn(6, |i, _| C64::from_polar(0.5 + i as f64, 0.9 * i as f64 - 1.0));
    let cost = |p: &CVec| (p - &v).norm_squared();
    let grad = |p: &CVec| (p - &v) * C64::from(2.0);
    let cfg = RcgConfig { grad_tol: 1e-8, ..Default::default() };
    let (phi, trace) = rcg_minimize(cost, grad, &CVec::from_element(6, C64::from(1.0)), &cfg).expect("rcg runs");

    let target = v.map(|z| z / z.norm());
    println!("iterations {}, final cost {:.6}", trace.iterations(), trace.final_cost());
    println!("distance to entrywise phase {:.2e}", (&phi - &target).norm());
    println!("max modulus error {:.2e}", modulus_error(&phi));
    let diag = convergence_diagnostics(&trace, cfg.rho1);
    println!("monotone and Armijo-consistent: {}", diag.passed());
}
