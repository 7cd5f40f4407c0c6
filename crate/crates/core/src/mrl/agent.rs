//! DDPG actor-critic, replay buffer, state normalization and the Gaussian
//! exploration policy with its meta-gradient.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::nn::{Activation, Adam, Grads, Mlp};

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig { hidden: vec![128, 128], actor_lr: 1e-4, critic_lr: 1e-3, tau: 0.005, gamma: 0.5, batch_size: 64 }
    }
}

/// States are stored raw and normalized when fed to a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// What the exploration policy needs to recompute its score.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploreRecord {
    pub state_norm: Vec<f64>,
    /// Exploitation actor output the Gaussian is centred on.
    pub base: Vec<f64>,
    /// Raw sample before projection.
    pub sample: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchTag {
    /// Generated by the exploration policy.
    Explore,
    /// Generated by an updated or reference policy for evaluation.
    Evaluate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub tag: BatchTag,
    pub transitions: Vec<Transition>,
    /// One per transition for exploration batches, empty otherwise.
    pub explore: Vec<ExploreRecord>,
}

impl RolloutBatch {
    pub fn episode_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        self.episode_return() / self.transitions.len().max(1) as f64
    }
}

/// Running per-feature mean and variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Normalizer { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    /// Standardized features clipped to `±10`; constant features map to 0.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if self.count < 2.0 {
            return x.to_vec();
        }
        x.iter()
            .zip(self.mean.iter().zip(&self.m2))
            .map(|(&v, (&m, &s))| {
                let var = s / self.count;
                if var > 1e-300 {
                    ((v - m) / var.sqrt()).clamp(-10.0, 10.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub capacity: usize,
    data: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, data: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// FIFO once full.
    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn extend(&mut self, batch: &RolloutBatch) {
        for t in &batch.transitions {
            self.push(t.clone());
        }
    }

    pub fn front(&self) -> Option<&Transition> {
        self.data.front()
    }

    /// Without replacement; everything when the buffer is smaller than `n`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        if self.data.len() <= n {
            return self.data.iter().collect();
        }
        rand::seq::index::sample(rng, self.data.len(), n).into_iter().map(|i| &self.data[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_q: f64,
    /// Non-finite loss or gradients; no parameter changed.
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub cfg: DdpgConfig,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

fn columns(rows: usize, cols: impl ExactSizeIterator<Item = Vec<f64>>) -> DMatrix<f64> {
    let n = cols.len();
    let flat: Vec<f64> = cols.flatten().collect();
    DMatrix::from_vec(rows, n, flat)
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: DdpgConfig, rng: &mut R) -> Self {
        let actor = Mlp::new(&sizes(state_dim, &cfg.hidden, action_dim), Activation::Relu, Activation::Tanh, rng);
        let critic = Mlp::new(&sizes(state_dim + action_dim, &cfg.hidden, 1), Activation::Relu, Activation::Linear, rng);
        Agent {
            actor_opt: Adam::new(&actor, cfg.actor_lr),
            critic_opt: Adam::new(&critic, cfg.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            cfg,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn act(&self, state_norm: &[f64]) -> Vec<f64> {
        self.actor.forward_one(state_norm)
    }

    pub fn q_value(&self, state_norm: &[f64], action: &[f64]) -> f64 {
        let mut x = state_norm.to_vec();
        x.extend_from_slice(action);
        self.critic.forward_one(&x)[0]
    }

    /// One critic step on the TD error against the target networks, one
    /// deterministic-policy-gradient actor step, then soft target updates.
    pub fn update(&mut self, batch: &[&Transition], norm: &Normalizer) -> UpdateStats {
        assert!(!batch.is_empty(), "empty batch");
        let sd = self.state_dim();
        let ad = self.action_dim();
        let b = batch.len() as f64;
        let s = columns(sd, batch.iter().map(|t| norm.apply(&t.state)).collect::<Vec<_>>().into_iter());
        let s2 = columns(sd, batch.iter().map(|t| norm.apply(&t.next_state)).collect::<Vec<_>>().into_iter());
        let a = columns(ad, batch.iter().map(|t| t.action.clone()).collect::<Vec<_>>().into_iter());

        let a2 = self.actor_target.forward(&s2);
        let q2 = self.critic_target.forward(&stack_rows(&s2, &a2));
        let y: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| t.reward + if t.done { 0.0 } else { self.cfg.gamma * q2[(0, i)] })
            .collect();

        let (q, cache) = self.critic.forward_cached(&stack_rows(&s, &a));
        let diff = DMatrix::from_fn(1, batch.len(), |_, i| q[(0, i)] - y[i]);
        let critic_loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
        let (cg, _) = self.critic.backward(&cache, &(&diff * (2.0 / b)));
        if !critic_loss.is_finite() || !cg.is_finite() {
            log::warn!("non-finite critic loss; update skipped");
            return UpdateStats { critic_loss, actor_q: f64::NAN, skipped: true };
        }

        let (pi, acache) = self.actor.forward_cached(&s);
        let (qpi, ccache) = self.critic.forward_cached(&stack_rows(&s, &pi));
        let actor_q = qpi.sum() / b;
        let (_, gin) = self.critic.backward(&ccache, &DMatrix::from_element(1, batch.len(), -1.0 / b));
        let (ag, _) = self.actor.backward(&acache, &gin.rows(sd, ad).into_owned());
        if !actor_q.is_finite() || !ag.is_finite() {
            log::warn!("non-finite actor objective; update skipped");
            return UpdateStats { critic_loss, actor_q, skipped: true };
        }
        self.critic_opt.step(&mut self.critic, &cg);
        self.actor_opt.step(&mut self.actor, &ag);
        self.critic_target.soft_update_from(&self.critic, self.cfg.tau);
        self.actor_target.soft_update_from(&self.actor, self.cfg.tau);
        UpdateStats { critic_loss, actor_q, skipped: false }
    }
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Updated copy of `agent` after one step on `batch`; the input is untouched.
pub fn ddpg_update(agent: &Agent, batch: &[&Transition], norm: &Normalizer) -> (Agent, UpdateStats) {
    let mut next = agent.clone();
    let stats = next.update(batch, norm);
    (next, stats)
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Diagonal Gaussian centred on the exploitation action plus a learned
/// offset: `a ~ N(μ_π(s) + m(s), diag(σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationPolicy {
    pub offset: Mlp,
    pub log_std: Vec<f64>,
}

impl ExplorationPolicy {
    /// The offset network starts at zero so initial exploration is plain
    /// Gaussian noise around the actor.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], log_std: f64, rng: &mut R) -> Self {
        let mut offset = Mlp::new(&sizes(state_dim, hidden, action_dim), Activation::Relu, Activation::Tanh, rng);
        offset.zero_output_layer();
        ExplorationPolicy { offset, log_std: vec![log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); action_dim] }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()).collect()
    }

    pub fn mean(&self, state_norm: &[f64], base: &[f64]) -> Vec<f64> {
        self.offset.forward_one(state_norm).iter().zip(base).map(|(o, b)| o + b).collect()
    }

    pub fn log_prob(&self, state_norm: &[f64], base: &[f64], a: &[f64]) -> f64 {
        let mu = self.mean(state_norm, base);
        gaussian_log_prob(&mu, &self.log_std, a)
    }

    pub fn sample<R: Rng + ?Sized>(&self, state_norm: &[f64], base: &[f64], rng: &mut R) -> ExploreRecord {
        let mu = self.mean(state_norm, base);
        let sd = self.std();
        let sample: Vec<f64> = mu.iter().zip(&sd).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect();
        let log_prob = gaussian_log_prob(&mu, &self.log_std, &sample);
        ExploreRecord { state_norm: state_norm.to_vec(), base: base.to_vec(), sample, log_prob }
    }

    /// `∇ log π_e(a|s)` for the offset network and the log-stds.
    pub fn score(&self, rec: &ExploreRecord) -> (Grads, Vec<f64>) {
        let x = DMatrix::from_column_slice(rec.state_norm.len(), 1, &rec.state_norm);
        let (out, cache) = self.offset.forward_cached(&x);
        let mut gmu = DMatrix::zeros(out.nrows(), 1);
        let mut gls = vec![0.0; out.nrows()];
        for i in 0..out.nrows() {
            let ls = self.log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let var = (2.0 * ls).exp();
            let d = rec.sample[i] - (rec.base[i] + out[(i, 0)]);
            gmu[(i, 0)] = d / var;
            gls[i] = d * d / var - 1.0;
        }
        let (g, _) = self.offset.backward(&cache, &gmu);
        (g, gls)
    }

    pub fn mean_log_std(&self) -> f64 {
        self.log_std.iter().sum::<f64>() / self.log_std.len().max(1) as f64
    }
}

pub fn gaussian_log_prob(mu: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, l), x)| {
            let l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (x - m) / l.exp();
            -0.5 * z * z - l - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// `r̂_{π′} − r̂_π`.
pub fn meta_reward(r_updated: f64, r_reference: f64) -> f64 {
    r_updated - r_reference
}

/// One REINFORCE ascent step `ϑ ← ϑ + η·r̂·Σ_t ∇ log π_e(a_t|s_t)`.
/// Returns false (and leaves the policy untouched) on non-finite input.
pub fn meta_gradient_update(pe: &mut ExplorationPolicy, records: &[ExploreRecord], r_hat: f64, lr: f64) -> bool {
    if !r_hat.is_finite() {
        log::warn!("non-finite meta-reward; meta update skipped");
        return false;
    }
    if r_hat == 0.0 || records.is_empty() {
        return true;
    }
    let mut total = Grads::zeros_like(&pe.offset);
    let mut gls = vec![0.0; pe.log_std.len()];
    for rec in records {
        let (g, l) = pe.score(rec);
        total.add_assign(&g);
        gls.iter_mut().zip(l).for_each(|(a, b)| *a += b);
    }
    if !total.is_finite() || gls.iter().any(|g| !g.is_finite()) {
        log::warn!("non-finite exploration score; meta update skipped");
        return false;
    }
    let k = lr * r_hat;
    pe.offset.add_scaled(&total, k);
    for (l, g) in pe.log_std.iter_mut().zip(gls) {
        *l = (*l + k * g).clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
    true
}
