//! Experiment plans: a scenario file extended with `[experiment]` and
//! `[train]` tables.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, HarnessError};
use crate::mrl::agent::DdpgConfig;
use crate::mrl::env::{EnvConfig, RewardMode};
use crate::mrl::train::{RewardShaping, TrainConfig, TrainMode};
use crate::scenario::{dbm_to_watts, RawConfig, Scenario};

/// Training setup compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Meta-trained exploration with the worst-case reward.
    Proposed,
    /// Plain DDPG with fixed Gaussian exploration.
    Baseline1,
    /// Plain DDPG with the CFO as part of the action and no worst-case search.
    Baseline2,
    /// Proposed method with antennas fixed on the λ/2 grid.
    Baseline3Fpa,
    /// Proposed method with the CFO box collapsed to zero.
    NoCfo,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Proposed, Method::Baseline1, Method::Baseline2, Method::Baseline3Fpa, Method::NoCfo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline1 => "baseline1",
            Method::Baseline2 => "baseline2",
            Method::Baseline3Fpa => "baseline3-fpa",
            Method::NoCfo => "no-cfo",
        }
    }

    /// Scenario and training configuration this method runs with.
    pub fn configure(self, scenario: &Scenario, base: &TrainConfig) -> Result<(Scenario, TrainConfig), HarnessError> {
        let mut cfg = base.clone();
        let mut sc = scenario.clone();
        match self {
            Method::Proposed => cfg.mode = TrainMode::Meta,
            Method::Baseline1 => cfg.mode = TrainMode::Plain,
            Method::Baseline2 => {
                cfg.mode = TrainMode::Plain;
                cfg.env.action.cfo = true;
            }
            Method::Baseline3Fpa => {
                cfg.mode = TrainMode::Meta;
                cfg.env.action.frozen_positions = true;
            }
            Method::NoCfo => {
                cfg.mode = TrainMode::Meta;
                let mut raw = sc.to_raw();
                raw.cfo.cfo_min = Some(0.0);
                raw.cfo.cfo_max = Some(0.0);
                sc = Scenario::validate(raw)?;
            }
        }
        Ok((sc, cfg))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Plan(format!("unknown mode {s:?}; expected one of proposed, baseline1, baseline2, baseline3-fpa, no-cfo")))
    }
}

/// Scenario parameter varied across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SweepAxis {
    /// Uplink power budget in dBm.
    TxPower,
    /// Half-width of the symmetric CFO box in Hz.
    CfoRange,
    /// Length of each movable region in wavelengths.
    MaRange,
    /// Distance of the target from the origin in meters.
    TargetDistance,
    None,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [SweepAxis::TxPower, SweepAxis::CfoRange, SweepAxis::MaRange, SweepAxis::TargetDistance, SweepAxis::None];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TxPower => "tx_power",
            SweepAxis::CfoRange => "cfo_range",
            SweepAxis::MaRange => "ma_range",
            SweepAxis::TargetDistance => "target_distance",
            SweepAxis::None => "none",
        }
    }

    /// `scenario` with this axis set to `value`.
    pub fn apply(self, scenario: &Scenario, value: f64) -> Result<Scenario, ConfigError> {
        let mut raw = scenario.to_raw();
        match self {
            SweepAxis::TxPower => raw.powers.p_max_ul = Some(dbm_to_watts(value)),
            SweepAxis::CfoRange => {
                raw.cfo.cfo_min = Some(-value);
                raw.cfo.cfo_max = Some(value);
            }
            SweepAxis::MaRange => {
                let half = 0.5 * value * scenario.wavelength;
                let (tc, rc) = (0.5 * (scenario.tx_range.0 + scenario.tx_range.1), 0.5 * (scenario.rx_range.0 + scenario.rx_range.1));
                raw.ma.t_min = Some(tc - half);
                raw.ma.t_max = Some(tc + half);
                raw.ma.r_min = Some(rc - half);
                raw.ma.r_max = Some(rc + half);
            }
            SweepAxis::TargetDistance => {
                raw.geometry.target = None;
                raw.geometry.target_distance = Some(value);
            }
            SweepAxis::None => {}
        }
        Scenario::validate(raw)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| HarnessError::Plan(format!("unknown sweep axis {s:?}; expected one of tx_power, cfo_range, ma_range, target_distance, none")))
    }
}

/// Parses `axis` or `axis:v1,v2,...`.
pub fn parse_sweep(s: &str) -> Result<(SweepAxis, Vec<f64>), HarnessError> {
    let (name, values) = s.split_once(':').unwrap_or((s, ""));
    let axis: SweepAxis = name.trim().parse()?;
    let grid = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().map_err(|_| HarnessError::Plan(format!("bad sweep value {v:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((axis, grid))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub modes: Option<Vec<String>>,
    pub axis: Option<String>,
    pub grid: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<String>,
    /// Held-out tasks scored at the end of each run.
    pub final_tasks: Option<usize>,
    pub record_runtime: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: Option<usize>,
    pub steps: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub batch_size: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub meta_lr: Option<f64>,
    pub init_std: Option<f64>,
    pub inner_updates: Option<usize>,
    pub updates_per_episode: Option<usize>,
    pub meta_eval_episodes: Option<usize>,
    pub warmup_tasks: Option<usize>,
    /// `raw`, `ratio` or `log_ratio`.
    pub shaping: Option<String>,
    pub reward: Option<String>,
    pub inner_budget: Option<usize>,
    pub inner_restarts: Option<usize>,
}

impl TrainSection {
    pub fn to_config(&self) -> Result<TrainConfig, HarnessError> {
        let d = TrainConfig::default();
        let dd = DdpgConfig::default();
        let de = EnvConfig::default();
        let mode = match self.reward.as_deref() {
            None | Some("robust") => RewardMode::Robust,
            Some("nominal") => RewardMode::Nominal,
            Some(o) => return Err(HarnessError::Plan(format!("train.reward must be robust or nominal, got {o:?}"))),
        };
        let cfg = TrainConfig {
            episodes: self.episodes.unwrap_or(d.episodes),
            steps: self.steps.unwrap_or(d.steps),
            ddpg: DdpgConfig {
                hidden: self.hidden.clone().unwrap_or(dd.hidden),
                actor_lr: self.actor_lr.unwrap_or(dd.actor_lr),
                critic_lr: self.critic_lr.unwrap_or(dd.critic_lr),
                tau: self.tau.unwrap_or(dd.tau),
                gamma: self.gamma.unwrap_or(dd.gamma),
                batch_size: self.batch_size.unwrap_or(dd.batch_size),
            },
            buffer_capacity: self.buffer_capacity.unwrap_or(d.buffer_capacity),
            meta_lr: self.meta_lr.unwrap_or(d.meta_lr),
            init_log_std: self.init_std.map(f64::ln).unwrap_or(d.init_log_std),
            inner_updates: self.inner_updates.unwrap_or(d.inner_updates),
            updates_per_episode: self.updates_per_episode.unwrap_or(d.updates_per_episode),
            meta_eval_episodes: self.meta_eval_episodes.unwrap_or(d.meta_eval_episodes),
            warmup_tasks: self.warmup_tasks.unwrap_or(d.warmup_tasks),
            shaping: match self.shaping.as_deref() {
                None => d.shaping,
                Some("raw") => RewardShaping::Raw,
                Some("ratio") => RewardShaping::Ratio,
                Some("log_ratio") => RewardShaping::LogRatio,
                Some(o) => return Err(HarnessError::Plan(format!("train.shaping must be raw, ratio or log_ratio, got {o:?}"))),
            },
            env: EnvConfig {
                mode,
                inner_budget: self.inner_budget.unwrap_or(de.inner_budget),
                inner_restarts: self.inner_restarts.unwrap_or(de.inner_restarts),
                ..de
            },
            ..d
        };
        let mut bad = Vec::new();
        if cfg.episodes == 0 || cfg.steps == 0 {
            bad.push("episodes and steps must be positive");
        }
        if cfg.ddpg.batch_size == 0 || cfg.buffer_capacity == 0 {
            bad.push("batch_size and buffer_capacity must be positive");
        }
        if !(cfg.init_log_std.is_finite()) {
            bad.push("init_std must be positive");
        }
        if cfg.ddpg.hidden.iter().any(|&h| h == 0) {
            bad.push("hidden layer widths must be positive");
        }
        if !bad.is_empty() {
            return Err(HarnessError::Plan(bad.join("; ")));
        }
        Ok(cfg)
    }
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub modes: Vec<Method>,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub final_tasks: usize,
    pub record_runtime: bool,
}

/// Splits a plan file into its scenario part and the two extra tables.
pub fn split_plan_text(text: &str) -> Result<(RawConfig, ExperimentSection, TrainSection), ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let take = |t: &mut toml::Table, key: &str| t.remove(key).unwrap_or_else(|| toml::Value::Table(toml::Table::new()));
    let exp = take(&mut table, "experiment").try_into().map_err(|e: toml::de::Error| ConfigError::Parse(format!("[experiment]: {e}")))?;
    let train = take(&mut table, "train").try_into().map_err(|e: toml::de::Error| ConfigError::Parse(format!("[train]: {e}")))?;
    let raw = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    Ok((raw, exp, train))
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let (raw, exp, train) = split_plan_text(text)?;
        let scenario = Scenario::validate(raw)?;
        let modes = match &exp.modes {
            Some(m) => m.iter().map(|s| s.parse()).collect::<Result<Vec<Method>, _>>()?,
            None => vec![Method::Proposed],
        };
        let axis = exp.axis.as_deref().map(str::parse).transpose()?.unwrap_or(SweepAxis::None);
        let plan = ExperimentPlan {
            scenario,
            modes,
            axis,
            grid: exp.grid.clone().unwrap_or_default(),
            seeds: exp.seeds.clone().unwrap_or_else(|| vec![0]),
            out_dir: PathBuf::from(exp.out.clone().unwrap_or_else(|| "out".into())),
            train: train.to_config()?,
            final_tasks: exp.final_tasks.unwrap_or(4),
            record_runtime: exp.record_runtime.unwrap_or(false),
        };
        plan.check()?;
        Ok(plan)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Plan running only the bare scenario with default settings.
    pub fn for_scenario(scenario: Scenario) -> Self {
        ExperimentPlan {
            scenario,
            modes: vec![Method::Proposed],
            axis: SweepAxis::None,
            grid: Vec::new(),
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
            final_tasks: 4,
            record_runtime: false,
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        let mut bad = Vec::new();
        if self.modes.is_empty() {
            bad.push("at least one mode is required".to_string());
        }
        if self.seeds.is_empty() {
            bad.push("at least one seed is required".to_string());
        }
        if self.axis != SweepAxis::None && self.grid.is_empty() {
            bad.push(format!("axis {} needs a nonempty grid", self.axis));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            bad.push("grid values must be finite".to_string());
        }
        if self.final_tasks == 0 {
            bad.push("final_tasks must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Plan(bad.join("; ")))
        }
    }

    /// Grid points actually run; `[NaN]` stands for the unswept scenario.
    pub fn points(&self) -> Vec<f64> {
        if self.axis == SweepAxis::None {
            vec![f64::NAN]
        } else {
            self.grid.clone()
        }
    }
}
