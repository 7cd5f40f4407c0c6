//! Episode loop, learning curves and policy evaluation.
//!
//! Task indices: training episode `e` uses channel substream `e`; the
//! evaluation rollouts of episode `e` use `EVAL_TASKS + e·k + j`; held-out
//! policy comparisons use `HOLDOUT_TASKS + j`. Learning rewards are divided
//! by the task's reference reward (target-steered beams on the λ/2 grid).

use std::io::Write;

use rand::Rng;

use crate::error::HarnessError;
use crate::robust_cfo::RobustConfig;
use crate::scenario::{RngStream, Scenario, SeededRng};

use super::agent::{
    meta_gradient_update, meta_reward, Agent, BatchTag, DdpgConfig, ExplorationPolicy, ExploreRecord, Normalizer,
    ReplayBuffer, RolloutBatch, Transition,
};
use super::env::{Env, EnvConfig};

pub const EVAL_TASKS: u32 = 1 << 20;
pub const HOLDOUT_TASKS: u32 = 1 << 21;
const WARMUP_TASKS: u32 = 3 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Exploration policy trained from the meta-reward.
    Meta,
    /// Fixed Gaussian exploration around the actor.
    Plain,
}

/// Map from the WCSR of a step to the learning reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardShaping {
    Raw,
    /// WCSR divided by the task reference WCSR.
    Ratio,
    /// `ln(1 + WCSR / reference)`.
    LogRatio,
}

impl RewardShaping {
    pub fn apply(self, wcsr: f64, reference: f64) -> f64 {
        match self {
            RewardShaping::Raw => wcsr,
            RewardShaping::Ratio => wcsr / reference,
            RewardShaping::LogRatio => (wcsr / reference).ln_1p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub episodes: usize,
    /// Steps per episode.
    pub steps: usize,
    pub ddpg: DdpgConfig,
    pub buffer_capacity: usize,
    pub meta_lr: f64,
    pub init_log_std: f64,
    /// DDPG steps producing the candidate actor from the exploration batch.
    pub inner_updates: usize,
    /// DDPG steps on the replay buffer per episode.
    pub updates_per_episode: usize,
    /// Rollouts per policy when estimating the meta-reward.
    pub meta_eval_episodes: usize,
    /// Tasks whose initial states seed the state normalizer.
    pub warmup_tasks: usize,
    pub shaping: RewardShaping,
    pub env: EnvConfig,
    pub seed: u64,
    pub divergence_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Meta,
            episodes: 300,
            steps: 20,
            ddpg: DdpgConfig::default(),
            buffer_capacity: 100_000,
            meta_lr: 1e-3,
            init_log_std: 0.3f64.ln(),
            inner_updates: 20,
            updates_per_episode: 20,
            meta_eval_episodes: 4,
            warmup_tasks: 16,
            shaping: RewardShaping::LogRatio,
            env: EnvConfig::default(),
            seed: 0,
            divergence_window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    /// Mean per-step reward of the deterministic actor on the episode's
    /// evaluation task, before the episode's updates.
    pub mean_reward: f64,
    pub critic_loss: f64,
    pub meta_reward: f64,
    pub exploration_logstd_mean: f64,
}

/// Trained policy with the normalization it expects.
#[derive(Debug, Clone)]
pub struct Policy {
    pub agent: Agent,
    pub explorer: ExplorationPolicy,
    pub normalizer: Normalizer,
}

impl Policy {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &TrainConfig) -> Self {
        let mut rng = SeededRng::new(cfg.seed, RngStream::NetworkInit);
        let agent = Agent::new(state_dim, action_dim, cfg.ddpg.clone(), &mut rng);
        let explorer = ExplorationPolicy::new(state_dim, action_dim, &cfg.ddpg.hidden, cfg.init_log_std, &mut rng);
        Policy { agent, explorer, normalizer: Normalizer::new(state_dim) }
    }

    pub fn act(&self, state: &[f64]) -> Vec<f64> {
        self.agent.act(&self.normalizer.apply(state))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: Policy,
    pub curve: Vec<CurvePoint>,
    pub skipped_updates: usize,
    pub skipped_meta_updates: usize,
    pub reward_fallbacks: usize,
}

/// Sets up a task and returns its initial state and reward scale.
fn start_task(env: &mut Env, seed: u64, task: u32, shaping: RewardShaping) -> Result<(Vec<f64>, f64), HarnessError> {
    let s = env.reset(seed, task)?;
    let scale = if shaping != RewardShaping::Raw {
        let r = env.reference_reward()?;
        if r > 0.0 && r.is_finite() {
            r
        } else {
            1.0
        }
    } else {
        1.0
    };
    Ok((s, scale))
}

struct Rollout {
    batch: RolloutBatch,
    fallbacks: usize,
}

/// Runs one episode; `choose` maps a raw state to a raw action and an
/// optional exploration record.
fn rollout(
    env: &mut Env,
    seed: u64,
    task: u32,
    steps: usize,
    shaping: RewardShaping,
    tag: BatchTag,
    mut choose: impl FnMut(&[f64]) -> (Vec<f64>, Option<ExploreRecord>),
) -> Result<Rollout, HarnessError> {
    let (mut s, scale) = start_task(env, seed, task, shaping)?;
    let mut transitions = Vec::with_capacity(steps);
    let mut explore = Vec::new();
    let mut fallbacks = 0;
    for t in 0..steps {
        let (raw, rec) = choose(&s);
        let raw: Vec<f64> = raw.iter().map(|x| if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 }).collect();
        let out = env.step(&raw)?;
        fallbacks += out.fell_back as usize;
        transitions.push(Transition {
            state: s,
            action: raw,
            reward: shaping.apply(out.reward, scale),
            next_state: out.state.clone(),
            done: t + 1 == steps,
        });
        explore.extend(rec);
        s = out.state;
    }
    Ok(Rollout { batch: RolloutBatch { tag, transitions, explore }, fallbacks })
}

fn deterministic(
    env: &mut Env,
    policy: &Agent,
    norm: &Normalizer,
    seed: u64,
    task: u32,
    cfg: &TrainConfig,
) -> Result<Rollout, HarnessError> {
    rollout(env, seed, task, cfg.steps, cfg.shaping, BatchTag::Evaluate, |s| (policy.act(&norm.apply(s)), None))
}

/// Trains an exploitation actor on `scenario`. Fully determined by
/// `(scenario, cfg)`.
pub fn train(scenario: &Scenario, cfg: &TrainConfig) -> Result<TrainOutput, HarnessError> {
    train_with(scenario, cfg, |_| {})
}

/// [`train`] with a per-episode callback.
pub fn train_with(
    scenario: &Scenario,
    cfg: &TrainConfig,
    mut on_episode: impl FnMut(&CurvePoint),
) -> Result<TrainOutput, HarnessError> {
    if cfg.steps == 0 || cfg.episodes == 0 {
        return Err(HarnessError::Plan("episodes and steps must be positive".into()));
    }
    let mut env = Env::new(scenario.clone(), cfg.env.clone());
    let mut policy = Policy::new(env.state_dim(), env.action_dim(), cfg);
    for k in 0..cfg.warmup_tasks as u32 {
        let s = env.reset(cfg.seed, WARMUP_TASKS + k)?;
        policy.normalizer.update(&s);
    }
    let mut explore_rng = SeededRng::new(cfg.seed, RngStream::Exploration);
    let mut replay_rng = SeededRng::new(cfg.seed, RngStream::Replay);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut curve = Vec::with_capacity(cfg.episodes);
    let (mut skipped, mut skipped_meta, mut fallbacks) = (0, 0, 0);
    let k_eval = cfg.meta_eval_episodes.max(1) as u32;

    for e in 0..cfg.episodes {
        let eval_task = |j: u32| EVAL_TASKS + e as u32 * k_eval + j;
        let mut r_pi = 0.0;
        for j in 0..k_eval {
            let r = deterministic(&mut env, &policy.agent, &policy.normalizer, cfg.seed, eval_task(j), cfg)?;
            fallbacks += r.fallbacks;
            r_pi += r.batch.episode_return() / k_eval as f64;
        }

        let b0 = {
            let Policy { agent, explorer, normalizer } = &mut policy;
            let r = rollout(&mut env, cfg.seed, e as u32, cfg.steps, cfg.shaping, BatchTag::Explore, |s| {
                normalizer.update(s);
                let sn = normalizer.apply(s);
                let base = agent.act(&sn);
                let rec = explorer.sample(&sn, &base, &mut explore_rng);
                (rec.sample.clone(), Some(rec))
            })?;
            fallbacks += r.fallbacks;
            r.batch
        };

        let mut meta = 0.0;
        if cfg.mode == TrainMode::Meta {
            let mut candidate = policy.agent.clone();
            let batch: Vec<&Transition> = b0.transitions.iter().collect();
            for _ in 0..cfg.inner_updates {
                skipped += candidate.update(&batch, &policy.normalizer).skipped as usize;
            }
            let mut r_new = 0.0;
            for j in 0..k_eval {
                let r = deterministic(&mut env, &candidate, &policy.normalizer, cfg.seed, eval_task(j), cfg)?;
                fallbacks += r.fallbacks;
                r_new += r.batch.episode_return() / k_eval as f64;
                buffer.extend(&r.batch);
            }
            meta = meta_reward(r_new, r_pi);
            if !meta_gradient_update(&mut policy.explorer, &b0.explore, meta, cfg.meta_lr) {
                skipped_meta += 1;
            }
        }
        buffer.extend(&b0);

        let mut loss = 0.0;
        let mut n = 0;
        for _ in 0..cfg.updates_per_episode {
            let batch = buffer.sample(cfg.ddpg.batch_size, &mut replay_rng);
            let st = policy.agent.update(&batch, &policy.normalizer);
            if st.skipped {
                skipped += 1;
            } else {
                loss += st.critic_loss;
                n += 1;
            }
        }
        let point = CurvePoint {
            episode: e,
            mean_reward: r_pi / cfg.steps as f64,
            critic_loss: if n > 0 { loss / n as f64 } else { f64::NAN },
            meta_reward: meta,
            exploration_logstd_mean: policy.explorer.mean_log_std(),
        };
        on_episode(&point);
        curve.push(point);

        let w = cfg.divergence_window;
        if w > 0 && curve.len() >= w {
            let m: f64 = curve[curve.len() - w..].iter().map(|c| c.mean_reward).sum::<f64>() / w as f64;
            if !m.is_finite() {
                log::error!("non-finite mean reward over the last {w} episodes; last point {:?}", curve.last());
                return Err(HarnessError::Diverged(e));
            }
        }
    }
    Ok(TrainOutput { policy, curve, skipped_updates: skipped, skipped_meta_updates: skipped_meta, reward_fallbacks: fallbacks })
}

/// Mean per-step learning reward of a deterministic policy over held-out tasks.
pub fn evaluate_policy(scenario: &Scenario, cfg: &TrainConfig, policy: &Policy, episodes: usize) -> Result<f64, HarnessError> {
    let mut env = Env::new(scenario.clone(), cfg.env.clone());
    let mut total = 0.0;
    for j in 0..episodes {
        let r = deterministic(&mut env, &policy.agent, &policy.normalizer, cfg.seed, HOLDOUT_TASKS + j as u32, cfg)?;
        total += r.batch.mean_reward();
    }
    Ok(total / episodes.max(1) as f64)
}

/// Mean per-step learning reward of uniform raw actions in `[−1, 1]` over
/// held-out tasks.
pub fn random_policy_reward(scenario: &Scenario, cfg: &TrainConfig, episodes: usize) -> Result<f64, HarnessError> {
    let mut env = Env::new(scenario.clone(), cfg.env.clone());
    let dim = env.action_dim();
    let mut rng = SeededRng::new(cfg.seed, RngStream::Evaluation);
    let mut total = 0.0;
    for j in 0..episodes {
        let r = rollout(&mut env, cfg.seed, HOLDOUT_TASKS + j as u32, cfg.steps, cfg.shaping, BatchTag::Evaluate, |_| {
            ((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect(), None)
        })?;
        total += r.batch.mean_reward();
    }
    Ok(total / episodes.max(1) as f64)
}

/// Worst-case performance of the final design of a deterministic episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalMetrics {
    pub wcsr: f64,
    pub gamma_r: f64,
    pub sum_gamma_c: f64,
}

/// Runs the policy for a full episode on each held-out task and scores the
/// last design with the full worst-case search, averaged over tasks.
pub fn final_metrics(
    scenario: &Scenario,
    cfg: &TrainConfig,
    policy: &Policy,
    tasks: usize,
    robust: &RobustConfig,
) -> Result<FinalMetrics, HarnessError> {
    let mut env = Env::new(scenario.clone(), cfg.env.clone());
    let mut acc = FinalMetrics { wcsr: 0.0, gamma_r: 0.0, sum_gamma_c: 0.0 };
    for j in 0..tasks {
        let mut s = env.reset(cfg.seed, HOLDOUT_TASKS + j as u32)?;
        let mut res = None;
        for _ in 0..cfg.steps {
            let (_, r) = env.execute(&policy.act(&s))?;
            s = env.state();
            res = Some(r);
        }
        let out = env.final_report(res.as_ref().expect("at least one step"), robust);
        acc.wcsr += out.report.objective;
        acc.gamma_r += out.report.gamma_r;
        acc.sum_gamma_c += out.report.gamma_c.iter().sum::<f64>();
    }
    let n = tasks.max(1) as f64;
    Ok(FinalMetrics { wcsr: acc.wcsr / n, gamma_r: acc.gamma_r / n, sum_gamma_c: acc.sum_gamma_c / n })
}

/// First episode whose trailing `window`-episode mean reaches `threshold`.
pub fn episodes_to_threshold(curve: &[CurvePoint], threshold: f64, window: usize) -> Option<usize> {
    let w = window.max(1);
    (0..curve.len()).find(|&e| {
        let lo = (e + 1).saturating_sub(w);
        let m = curve[lo..=e].iter().map(|c| c.mean_reward).sum::<f64>() / (e + 1 - lo) as f64;
        e + 1 >= w && m >= threshold
    })
}

/// Mean reward over the first and last `fraction` of the curve.
pub fn head_tail_means(curve: &[CurvePoint], fraction: f64) -> (f64, f64) {
    let k = ((curve.len() as f64 * fraction).round() as usize).clamp(1, curve.len().max(1));
    let mean = |c: &[CurvePoint]| c.iter().map(|p| p.mean_reward).sum::<f64>() / c.len().max(1) as f64;
    (mean(&curve[..k.min(curve.len())]), mean(&curve[curve.len().saturating_sub(k)..]))
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "mean_reward", "critic_loss", "meta_reward", "exploration_logstd_mean"])?;
    for p in curve {
        w.write_record([
            p.episode.to_string(),
            p.mean_reward.to_string(),
            p.critic_loss.to_string(),
            p.meta_reward.to_string(),
            p.exploration_logstd_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
