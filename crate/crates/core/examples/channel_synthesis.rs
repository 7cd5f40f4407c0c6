//! Draw a channel realization on the λ/2 grid, move one antenna, and write
//! both channel sets as CSV.

use cfdfrc::channel::{rebuild_for_layout, synthesize, write_channel_csv, ChannelRngs, Layout};
use cfdfrc::scenario::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = Scenario::desk();
    let layout = Layout::fpa(&s);
    let (angles, gains, ch) = synthesize(&s, &layout, &mut ChannelRngs::new(7))?;

    let mut moved = layout.clone();
    moved.tx[0][0] = s.tx_range.0;
    let ch2 = rebuild_for_layout(&s, &angles, &gains, &moved)?;
    println!("uplink norm at grid {:.3e}, SI norm at grid {:.3e}, after move {:.3e}", ch.uplink[0][0].norm(), ch.si[0].norm(), ch2.si[0].norm());

    let dir = std::env::temp_dir();
    write_channel_csv(&ch, std::fs::File::create(dir.join("channels_grid.csv"))?)?;
    write_channel_csv(&ch2, std::fs::File::create(dir.join("channels_moved.csv"))?)?;
    println!("wrote channels_grid.csv and channels_moved.csv to {}", dir.display());
    Ok(())
}
