//! Command-line front end. The binary only parses arguments and calls [`run`].

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::channel::{synthesize, write_channel_csv, ChannelRngs, Layout};
use crate::error::HarnessError;
use crate::harness::{self, parse_sweep, read_summary, summarize_into, ExperimentPlan, Method};
use crate::mrl::checkpoint::Checkpoint;
use crate::mrl::train::{final_metrics, train_with, write_curve_csv};
use crate::robust_cfo::{worst_case_cfo, RobustConfig};
use crate::scenario::Scenario;
use crate::signal::{assemble_blocks, evaluate, refresh_receivers, CfoOffsets, ResourceState, Symbols, WcsrReport};

#[derive(Debug, Parser)]
#[command(name = "cfdfrc", version, about = "Cell-free radar-communication simulator and trainer")]
pub struct Cli {
    /// Scenario or plan file (TOML). Defaults to the small desk scenario.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for channels and training; replaces the plan's seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Method, or a comma-separated list for `experiment`.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Sweep as `axis` or `axis:v1,v2,...`.
    #[arg(long, global = true)]
    pub sweep: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario or plan file and print the resolved values.
    Validate,
    /// Draw channels on the λ/2 grid and write them as CSV.
    Synth,
    /// Evaluate the initial design at zero CFO.
    Eval,
    /// Search the worst-case CFO for the initial design.
    Robust,
    /// Train one policy and score it on held-out tasks.
    Train,
    /// Run every mode, grid point and seed of a plan.
    Experiment,
    /// Aggregate an existing summary.csv.
    Summarize,
}

fn load_plan(cli: &Cli) -> Result<(ExperimentPlan, String), HarnessError> {
    let (mut plan, text) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            (ExperimentPlan::from_toml_str(&text)?, text)
        }
        None => {
            let plan = ExperimentPlan::for_scenario(Scenario::desk());
            let text = plan.scenario.to_toml_string();
            (plan, text)
        }
    };
    if let Some(m) = &cli.mode {
        plan.modes = m.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<Method>, _>>()?;
    }
    if let Some(s) = &cli.sweep {
        let (axis, grid) = parse_sweep(s)?;
        plan.axis = axis;
        if !grid.is_empty() {
            plan.grid = grid;
        }
    }
    if let Some(seed) = cli.seed {
        plan.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        plan.out_dir = out.clone();
    }
    plan.check()?;
    Ok((plan, text))
}

fn out_dir(plan: &ExperimentPlan) -> Result<&Path, HarnessError> {
    fs::create_dir_all(&plan.out_dir)?;
    Ok(&plan.out_dir)
}

/// Initial design with optimal receivers at zero CFO on the λ/2 grid.
fn initial_design(scenario: &Scenario, seed: u64) -> Result<(crate::channel::ChannelSet, ResourceState, Symbols), HarnessError> {
    let (_, _, ch) = synthesize(scenario, &Layout::fpa(scenario), &mut ChannelRngs::new(seed))?;
    let mut res = ResourceState::initial(scenario, &ch);
    let sym = Symbols::for_scenario(scenario);
    refresh_receivers(scenario, &ch, &mut res, &CfoOffsets::zeros(scenario.num_aps), &sym);
    Ok((ch, res, sym))
}

fn write_report(path: &Path, users: usize, rows: &[(String, &WcsrReport)]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["point".to_string()];
    header.extend(WcsrReport::csv_header(users));
    w.write_record(&header)?;
    for (name, r) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(r.csv_row());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), HarnessError> {
    let (plan, text) = load_plan(cli)?;
    let seed = plan.seeds[0];
    let sc = &plan.scenario;
    match cli.command {
        Command::Validate => {
            print!("{}", sc.to_toml_string());
            println!("# modes: {}", plan.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(", "));
            println!("# sweep: {} {:?}, seeds {:?}", plan.axis, plan.grid, plan.seeds);
            println!("# valid");
        }
        Command::Synth => {
            let (_, _, ch) = synthesize(sc, &Layout::fpa(sc), &mut ChannelRngs::new(seed))?;
            let path = out_dir(&plan)?.join("channels.csv");
            write_channel_csv(&ch, fs::File::create(&path)?)?;
            println!("wrote {}", path.display());
        }
        Command::Eval => {
            let (ch, res, sym) = initial_design(sc, seed)?;
            let mut corner = CfoOffsets::zeros(sc.num_aps);
            corner.values.iter_mut().enumerate().for_each(|(a, v)| *v = if a % 2 == 0 { sc.cfo_max } else { sc.cfo_min });
            let nominal = evaluate(sc, &ch, &res, &CfoOffsets::zeros(sc.num_aps), &sym);
            let alt = evaluate(sc, &ch, &res, &corner, &sym);
            let path = out_dir(&plan)?.join("eval.csv");
            write_report(&path, sc.num_users, &[("zero_cfo".into(), &nominal), ("alternating_corner".into(), &alt)])?;
            println!("zero-CFO WCSR {:.6e}, alternating-corner WCSR {:.6e}", nominal.objective, alt.objective);
        }
        Command::Robust => {
            let (ch, res, sym) = initial_design(sc, seed)?;
            let blocks = assemble_blocks(sc, &ch, &res, &CfoOffsets::zeros(sc.num_aps), &sym);
            let cfg = RobustConfig { seed, ..Default::default() };
            let wc = worst_case_cfo(sc, &blocks, &res, &cfg)?;
            let dir = out_dir(&plan)?;
            write_report(&dir.join("robust.csv"), sc.num_users, &[("nominal".into(), &wc.nominal), ("worst_case".into(), &wc.report)])?;
            let mut w = csv::Writer::from_path(dir.join("robust_trace.csv"))?;
            w.write_record(["start", "outer_iter", "eta", "penalty_weight", "coupling_residual", "surrogate_cost", "exact_wcsr", "fp_identity_residual"])?;
            for r in &wc.trace {
                w.write_record([
                    r.start.to_string(),
                    r.outer_iter.to_string(),
                    r.eta.to_string(),
                    r.penalty_weight.to_string(),
                    r.coupling_residual.to_string(),
                    r.surrogate_cost.to_string(),
                    r.exact_wcsr.to_string(),
                    r.fp_identity_residual.to_string(),
                ])?;
            }
            w.flush()?;
            let mut c = csv::Writer::from_path(dir.join("robust_cfo.csv"))?;
            c.write_record(["ap", "cfo_hz"])?;
            for (a, v) in wc.state.cfo.values.iter().enumerate() {
                c.write_record([a.to_string(), v.to_string()])?;
            }
            c.flush()?;
            println!("nominal WCSR {:.6e}, worst-case WCSR {:.6e} at {:?} Hz (converged: {})", wc.nominal.objective, wc.report.objective, wc.state.cfo.values, wc.converged);
        }
        Command::Train => {
            let method = plan.modes[0];
            let (scenario, mut cfg) = method.configure(sc, &plan.train)?;
            cfg.seed = seed;
            let out = train_with(&scenario, &cfg, |p| {
                if p.episode % 10 == 0 {
                    log::info!("episode {} reward {:.4} critic loss {:.3e}", p.episode, p.mean_reward, p.critic_loss);
                }
            })?;
            let dir = out_dir(&plan)?;
            write_curve_csv(&out.curve, fs::File::create(dir.join("curve.csv"))?)?;
            Checkpoint::of_policy(&out.policy, &text).save(dir.join("policy.ckpt"))?;
            let m = final_metrics(&scenario, &cfg, &out.policy, plan.final_tasks, &RobustConfig::default())?;
            let mut w = csv::Writer::from_path(dir.join("final.csv"))?;
            w.write_record(["mode", "seed", "wcsr", "gamma_r", "sum_gamma_c", "skipped_updates", "reward_fallbacks"])?;
            w.write_record([
                method.to_string(),
                seed.to_string(),
                m.wcsr.to_string(),
                m.gamma_r.to_string(),
                m.sum_gamma_c.to_string(),
                out.skipped_updates.to_string(),
                out.reward_fallbacks.to_string(),
            ])?;
            w.flush()?;
            println!("{method}: held-out worst-case WCSR {:.6e}", m.wcsr);
        }
        Command::Experiment => {
            let out = harness::run(&plan)?;
            print!("{}", fs::read_to_string(&out.report)?);
            println!("wrote {}", out.summary.display());
        }
        Command::Summarize => {
            let dir = out_dir(&plan)?;
            let rows = read_summary(dir.join("summary.csv"))?;
            let (_, report) = summarize_into(&rows, dir)?;
            print!("{}", fs::read_to_string(report)?);
        }
    }
    Ok(())
}
