//! Short meta-RL training run on the desk scenario: learning curve,
//! comparison with random actions, and a checkpoint roundtrip.

use cfdfrc::mrl::checkpoint::Checkpoint;
use cfdfrc::mrl::train::{evaluate_policy, random_policy_reward, train_with, Policy, TrainConfig};
use cfdfrc::mrl::RewardMode;
use cfdfrc::scenario::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let s = Scenario::desk();
    let mut cfg = TrainConfig { episodes, seed: 5, ..Default::default() };
    cfg.env.mode = RewardMode::Nominal;
    let out = train_with(&s, &cfg, |p| {
        if p.episode % 10 == 0 {
            println!("episode {:>4} reward {:.4} critic loss {:.3e} meta {:+.3}", p.episode, p.mean_reward, p.critic_loss, p.meta_reward);
        }
    })?;
    println!("trained {:.4} vs random {:.4}", evaluate_policy(&s, &cfg, &out.policy, 10)?, random_policy_reward(&s, &cfg, 10)?);

    let path = std::env::temp_dir().join("policy.ckpt");
    Checkpoint::of_policy(&out.policy, "example").save(&path)?;
    let mut fresh = Policy::new(out.policy.agent.state_dim(), out.policy.agent.action_dim(), &cfg);
    Checkpoint::load(&path)?.restore_into(&mut fresh, "example")?;
    println!("restored actor matches: {}", fresh.agent.actor == out.policy.agent.actor);
    Ok(())
}
