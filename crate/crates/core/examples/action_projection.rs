//! Decode raw actions, project them onto the feasible set, and show that a
//! second projection changes nothing.

use cfdfrc::mrl::{project_action, ActionOptions, ActionSpace};
use cfdfrc::scenario::Scenario;

fn main() {
    let s = Scenario::desk();
    let space = ActionSpace::new(&s, ActionOptions::default());
    println!("action dimension {}", space.dim());
    let raw: Vec<f64> = (0..space.dim()).map(|i| 3.0 * (1.7 * i as f64).sin()).collect();
    let a = project_action(&space.decode(&raw, &s), &s);
    let b = project_action(&a, &s);
    println!("tx positions {:?}", a.tx);
    println!("rx positions {:?}", a.rx);
    println!("powers {:?} (budget {:.3e})", a.p, s.p_max_ul);
    for (i, w) in a.w.iter().enumerate() {
        println!("beam {i} power {:.6e} (budget {:.6e})", w.norm_squared(), s.p_max_dl);
    }
    println!("idempotent: {}", a == b);
    let res = a.to_resources(&s);
    println!("violations: {:?}", res.violations(&s, 1e-10));
}
