//! Train a small Meta-RL agent in-context learner and watch its regret
//! fall below the random baseline. This demo uses a reduced episode
//! budget; the published recipe is 5000 episodes (`AgentConfig::for_task`).
//!
//! ```bash
//! cargo run --example train_metarl [episodes]
//! ```

use banditlab::analysis::{regret_curve, ArmFilter};
use banditlab::metarl::{evaluate, train, AgentConfig};
use banditlab::tasks::{build_task, TaskId};

fn main() {
    let episodes: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(600);
    let mut config = AgentConfig::for_task(TaskId::Casinos);
    config.episodes_total = episodes;

    println!("training {episodes} episodes (batch {})...", config.batch_size);
    let (checkpoint, log) = train(config, 17).expect("training converges");
    let first: f64 = log[..50.min(log.len())]
        .iter()
        .map(|e| e.mean_reward)
        .sum::<f64>()
        / 50f64.min(log.len() as f64);
    let last: f64 = log[log.len().saturating_sub(50)..]
        .iter()
        .map(|e| e.mean_reward)
        .sum::<f64>()
        / 50f64.min(log.len() as f64);
    println!("mean episode reward: first 50 = {first:.2}, last 50 = {last:.2}");

    let task = build_task(1, 42).unwrap();
    let runs = evaluate(&checkpoint, &task, 30, 7, false).unwrap();
    let curve = regret_curve(&runs, ArmFilter::All).unwrap();
    println!(
        "evaluation regret: first visit {:.4}, last visit {:.4} (random baseline 0.0625)",
        curve.points[0].mean,
        curve.final_mean()
    );
    let path = std::env::temp_dir().join("banditlab_demo_checkpoint.json");
    checkpoint.save(&path).unwrap();
    println!("checkpoint saved to {}", path.display());
}
