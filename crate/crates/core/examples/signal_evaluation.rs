//! Evaluate radar and communication SINRs of the initial design before and
//! after choosing optimal receive filters, and at a fixed CFO.

use cfdfrc::channel::{synthesize, ChannelRngs, Layout};
use cfdfrc::scenario::Scenario;
use cfdfrc::signal::{evaluate, refresh_receivers, CfoOffsets, ResourceState, Symbols};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = Scenario::desk();
    let (_, _, ch) = synthesize(&s, &Layout::fpa(&s), &mut ChannelRngs::new(1))?;
    let sym = Symbols::for_scenario(&s);
    let zero = CfoOffsets::zeros(s.num_aps);

    let mut res = ResourceState::initial(&s, &ch);
    let before = evaluate(&s, &ch, &res, &zero, &sym);
    refresh_receivers(&s, &ch, &mut res, &zero, &sym);
    let after = evaluate(&s, &ch, &res, &zero, &sym);
    println!("uniform filters: gamma_r {:.3e} gamma_c {:?} wcsr {:.3e}", before.gamma_r, before.gamma_c, before.objective);
    println!("optimal filters: gamma_r {:.3e} gamma_c {:?} wcsr {:.3e}", after.gamma_r, after.gamma_c, after.objective);

    let offset = CfoOffsets { num_aps: s.num_aps, values: vec![120.0, -80.0] };
    let shifted = evaluate(&s, &ch, &res, &offset, &sym);
    println!("at CFO {:?} Hz: wcsr {:.3e}", offset.values, shifted.objective);
    Ok(())
}
