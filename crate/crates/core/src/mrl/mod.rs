//! Meta-reinforcement learning over the radar-communication environment.
//!
//! [`train`] runs the episode loop: an exploration policy collects data,
//! a DDPG step produces a candidate actor whose improvement is the
//! meta-reward, the exploration policy is nudged by REINFORCE, and the
//! exploitation actor is updated from the replay buffer.

pub mod action;
pub mod agent;
pub mod checkpoint;
pub mod env;
pub mod nn;
pub mod train;

pub use action::{project_action, Action, ActionOptions, ActionSpace};
pub use agent::{ddpg_update, meta_gradient_update, meta_reward, Agent, DdpgConfig, ExplorationPolicy, ReplayBuffer};
pub use env::{encode_state, reward, Env, EnvConfig, RewardMode};
pub use train::{train, RewardShaping, TrainConfig, TrainMode, TrainOutput};
