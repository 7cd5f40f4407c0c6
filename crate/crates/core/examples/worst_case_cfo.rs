//! Worst-case CFO search for a fixed design, compared against random
//! in-box CFO draws.

use cfdfrc::channel::{synthesize, ChannelRngs, Layout};
use cfdfrc::robust_cfo::{sample_objectives, worst_case_cfo, RobustConfig};
use cfdfrc::scenario::Scenario;
use cfdfrc::signal::{assemble_blocks, refresh_receivers, CfoOffsets, ResourceState, Symbols};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = Scenario::desk();
    let (_, _, ch) = synthesize(&s, &Layout::fpa(&s), &mut ChannelRngs::new(4))?;
    let sym = Symbols::for_scenario(&s);
    let zero = CfoOffsets::zeros(s.num_aps);
    let mut res = ResourceState::initial(&s, &ch);
    refresh_receivers(&s, &ch, &mut res, &zero, &sym);
    let blocks = assemble_blocks(&s, &ch, &res, &zero, &sym);

    let wc = worst_case_cfo(&s, &blocks, &res, &RobustConfig::default())?;
    println!("nominal {:.4e}  worst case {:.4e} at {:?} Hz", wc.nominal.objective, wc.report.objective, wc.state.cfo.values);
    for r in wc.trace.iter().take(6) {
        println!("  start {} iter {} penalty {:.0e} coupling {:.2e} wcsr {:.4e}", r.start, r.outer_iter, r.penalty_weight, r.coupling_residual, r.exact_wcsr);
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut draws = sample_objectives(&s, &blocks, &res, 1000, &mut rng);
    draws.sort_by(f64::total_cmp);
    println!("random draws: min {:.4e}  5th percentile {:.4e}  median {:.4e}", draws[0], draws[49], draws[500]);
    Ok(())
}
