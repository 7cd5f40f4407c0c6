//! Environment: state encoding, reward, and the per-episode task.

use crate::channel::{draw_environment, rebuild_for_layout, ChannelRngs, ChannelSet, GainSet, Layout, PathAngles};
use crate::error::ModelError;
use crate::linalg::{CMat, CVec};
use crate::robust_cfo::{evaluate_at, worst_case_cfo, RobustConfig};
use crate::scenario::Scenario;
use crate::signal::{assemble_blocks, pairs, refresh_receivers, CfoOffsets, ResourceState, Symbols, WcsrReport};

use super::action::{project_action, Action, ActionOptions, ActionSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// WCSR at `Δf = 0`.
    Nominal,
    /// WCSR at the worst-case CFO found with a capped inner budget.
    Robust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub mode: RewardMode,
    /// Outer iterations of the worst-case search per reward.
    pub inner_budget: usize,
    /// Random restarts of the worst-case search per reward.
    pub inner_restarts: usize,
    pub action: ActionOptions,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { mode: RewardMode::Robust, inner_budget: 3, inner_restarts: 0, action: ActionOptions::default() }
    }
}

impl EnvConfig {
    pub fn robust_config(&self) -> RobustConfig {
        RobustConfig { max_outer: self.inner_budget, restarts: self.inner_restarts, ..Default::default() }
    }
}

/// Feature count of [`encode_state`].
pub fn state_dim(s: &Scenario) -> usize {
    let (a, u, m, n) = (s.num_aps, s.num_users, s.rx_antennas, s.tx_antennas);
    2 * (u * a * m + a * m * n + a * (a - 1) * m * n + a * m * n) + a * (n + m)
}

fn push_mat(out: &mut Vec<f64>, m: &CMat) {
    for z in m.iter() {
        out.push(z.re);
        out.push(z.im);
    }
}

fn push_vec(out: &mut Vec<f64>, v: &CVec) {
    for z in v.iter() {
        out.push(z.re);
        out.push(z.im);
    }
}

/// Flattens uplink channels (user-major), SI, inter-AP and monostatic
/// sensing channels as `(re, im)` pairs, then the positions in wavelengths.
pub fn encode_state(channels: &ChannelSet, layout: &Layout, scenario: &Scenario) -> Vec<f64> {
    let mut out = Vec::with_capacity(state_dim(scenario));
    for u in 0..scenario.num_users {
        for a in 0..scenario.num_aps {
            push_vec(&mut out, &channels.uplink[a][u]);
        }
    }
    for si in &channels.si {
        push_mat(&mut out, si);
    }
    for (rx, tx) in pairs(scenario.num_aps) {
        push_mat(&mut out, &channels.iai[rx][tx]);
    }
    for a in 0..scenario.num_aps {
        push_mat(&mut out, &channels.sensing[a][a]);
    }
    for pos in layout.tx.iter().chain(&layout.rx) {
        out.extend(pos.iter().map(|x| x / scenario.wavelength));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardOutcome {
    pub value: f64,
    pub report: WcsrReport,
    /// The worst-case search failed and the nominal value was used.
    pub fell_back: bool,
}

/// WCSR of `res` (receive filters taken as given). `fixed_cfo` evaluates at
/// that CFO instead of searching.
pub fn reward(
    scenario: &Scenario,
    channels: &ChannelSet,
    res: &ResourceState,
    sym: &Symbols,
    mode: RewardMode,
    robust: &RobustConfig,
    fixed_cfo: Option<&CfoOffsets>,
) -> RewardOutcome {
    let zero = CfoOffsets::zeros(scenario.num_aps);
    let blocks = assemble_blocks(scenario, channels, res, &zero, sym);
    let at = |cfo: &CfoOffsets| evaluate_at(scenario, &blocks, res, cfo);
    let done = |report: WcsrReport, fell_back| RewardOutcome { value: report.objective, report, fell_back };
    if let Some(cfo) = fixed_cfo {
        return done(at(cfo), false);
    }
    match mode {
        RewardMode::Nominal => done(at(&zero), false),
        RewardMode::Robust if scenario.cfo_min == scenario.cfo_max => {
            let mut c = zero.clone();
            c.values.fill(scenario.cfo_min);
            done(at(&c), false)
        }
        RewardMode::Robust => match worst_case_cfo(scenario, &blocks, res, robust) {
            Ok(wc) => done(wc.report, false),
            Err(e) => {
                log::warn!("worst-case search failed ({e}); using nominal reward");
                done(at(&zero), true)
            }
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Encoding of the executed (projected) action.
    pub executed: Vec<f64>,
    pub report: WcsrReport,
    pub fell_back: bool,
}

/// One task: a fixed draw of path angles and gains whose channels follow
/// the antenna positions chosen by the actions.
#[derive(Debug, Clone)]
pub struct Env {
    pub scenario: Scenario,
    pub cfg: EnvConfig,
    pub space: ActionSpace,
    robust: RobustConfig,
    sym: Symbols,
    env: Option<(PathAngles, GainSet)>,
    channels: Option<ChannelSet>,
    layout: Layout,
    pub steps: usize,
}

impl Env {
    pub fn new(scenario: Scenario, cfg: EnvConfig) -> Self {
        Env {
            space: ActionSpace::new(&scenario, cfg.action),
            robust: cfg.robust_config(),
            sym: Symbols::for_scenario(&scenario),
            layout: Layout::fpa(&scenario),
            env: None,
            channels: None,
            steps: 0,
            scenario,
            cfg,
        }
    }

    pub fn state_dim(&self) -> usize {
        state_dim(&self.scenario)
    }

    pub fn action_dim(&self) -> usize {
        self.space.dim()
    }

    /// Draws task `task` of `seed` and puts the arrays on the λ/2 grid.
    pub fn reset(&mut self, seed: u64, task: u32) -> Result<Vec<f64>, ModelError> {
        let mut rngs = ChannelRngs::with_substream(seed, task);
        let (angles, gains) = draw_environment(&self.scenario, &mut rngs)?;
        self.layout = Layout::fpa(&self.scenario);
        self.channels = Some(rebuild_for_layout(&self.scenario, &angles, &gains, &self.layout)?);
        self.env = Some((angles, gains));
        self.steps = 0;
        Ok(self.state())
    }

    pub fn channels(&self) -> &ChannelSet {
        self.channels.as_ref().expect("reset before use")
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn state(&self) -> Vec<f64> {
        encode_state(self.channels(), &self.layout, &self.scenario)
    }

    /// Projects and executes a raw action: antennas move, channels are
    /// rebuilt, and receive filters are set optimally at `Δf = 0` unless
    /// the action carries them.
    pub fn execute(&mut self, raw: &[f64]) -> Result<(Action, ResourceState), ModelError> {
        let action = project_action(&self.space.decode(raw, &self.scenario), &self.scenario);
        let mut res = action.to_resources(&self.scenario);
        let (angles, gains) = self.env.as_ref().expect("reset before use");
        self.channels = Some(rebuild_for_layout(&self.scenario, angles, gains, &res.layout)?);
        self.layout = res.layout.clone();
        if action.filters.is_none() {
            let zero = CfoOffsets::zeros(self.scenario.num_aps);
            refresh_receivers(&self.scenario, self.channels(), &mut res, &zero, &self.sym);
        }
        self.steps += 1;
        Ok((action, res))
    }

    pub fn evaluate(&self, res: &ResourceState, action: Option<&Action>) -> RewardOutcome {
        let fixed = action.and_then(|a| a.cfo.as_ref());
        reward(&self.scenario, self.channels(), res, &self.sym, self.cfg.mode, &self.robust, fixed)
    }

    pub fn step(&mut self, raw: &[f64]) -> Result<StepOutcome, ModelError> {
        let (action, res) = self.execute(raw)?;
        let out = self.evaluate(&res, Some(&action));
        Ok(StepOutcome {
            state: self.state(),
            reward: out.value,
            executed: self.space.encode(&action, &self.scenario),
            report: out.report,
            fell_back: out.fell_back,
        })
    }

    /// Reward of the target-steered full-power design on the grid with
    /// optimal receivers, for the current task.
    pub fn reference_reward(&self) -> Result<f64, ModelError> {
        let layout = Layout::fpa(&self.scenario);
        let (angles, gains) = self.env.as_ref().expect("reset before use");
        let ch = rebuild_for_layout(&self.scenario, angles, gains, &layout)?;
        let mut res = ResourceState::initial(&self.scenario, &ch);
        let zero = CfoOffsets::zeros(self.scenario.num_aps);
        refresh_receivers(&self.scenario, &ch, &mut res, &zero, &self.sym);
        Ok(reward(&self.scenario, &ch, &res, &self.sym, self.cfg.mode, &self.robust, None).value)
    }

    /// Full-budget worst-case report for `res` on the current channels.
    pub fn final_report(&self, res: &ResourceState, robust: &RobustConfig) -> RewardOutcome {
        reward(&self.scenario, self.channels(), res, &self.sym, RewardMode::Robust, robust, None)
    }
}
