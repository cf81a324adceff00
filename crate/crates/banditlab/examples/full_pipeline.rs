//! The config-driven pipeline end to end: simulate a battery, fit and
//! compare models, and write the report tree (curves, fit tables,
//! learning-rate summaries, manifest).
//!
//! ```bash
//! cargo run --example full_pipeline
//! ```

use banditlab::pipeline::{cmd_report, cmd_simulate, ExperimentConfig, OptimizerConfig};

fn main() {
    let out = std::env::temp_dir().join("banditlab_pipeline_demo");
    let config = ExperimentConfig {
        n_runs: 10,
        seed: 33,
        out_dir: out.clone(),
        optimizer: OptimizerConfig {
            n_restarts: 6,
            ..OptimizerConfig::default()
        },
        ..ExperimentConfig::default()
    };

    let sim = cmd_simulate(&config).expect("simulation succeeds");
    println!("wrote {} transcript files", sim.files.len());

    let manifest = cmd_report(&config, &[]).expect("report succeeds");
    println!("report artifacts (config hash {}):", manifest.config_hash);
    for a in &manifest.artifacts {
        println!("  {:10} {}", a.kind, a.path);
    }
    println!("under {}", out.display());
}
