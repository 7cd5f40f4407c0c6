//! A small CFO-range sweep comparing the proposed method with the
//! fixed-antenna baseline, written as summary, aggregate and report files.

use cfdfrc::harness::{run, ExperimentPlan};

const PLAN: &str = r#"
[system]
num_aps = 2
num_users = 2
tx_antennas = 2
rx_antennas = 2
subcarriers = 4

[experiment]
modes = ["proposed", "baseline3-fpa"]
axis = "cfo_range"
grid = [0.0, 100.0, 200.0]
seeds = [0, 1]
final_tasks = 2

[train]
episodes = 10
steps = 10
reward = "nominal"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut plan = ExperimentPlan::from_toml_str(PLAN)?;
    plan.out_dir = std::env::temp_dir().join("cfdfrc_sweep");
    let out = run(&plan)?;
    print!("{}", std::fs::read_to_string(&out.report)?);
    println!("summary: {}", out.summary.display());
    Ok(())
}
