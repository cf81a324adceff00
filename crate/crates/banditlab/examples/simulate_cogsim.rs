//! Simulate Rescorla-Wagner agents on the partial-feedback casino task and
//! summarize their regret.
//!
//! ```bash
//! cargo run --example simulate_cogsim
//! ```

use banditlab::analysis::{regret_curve, ArmFilter};
use banditlab::cogmodel::{simulate_agent, ModelId, ParamVector};
use banditlab::fitting::derive_seed;
use banditlab::llm_io::write_transcripts;
use banditlab::tasks::build_task;

fn main() {
    // An optimistic learner: strong updates from good news, weak from bad.
    let params = ParamVector::new(vec![0.6, 0.2], 10.0);
    let n_runs = 20;

    let transcripts: Vec<_> = (0..n_runs)
        .map(|run| {
            let task = build_task(1, derive_seed(7, run, 0)).expect("task 1 exists");
            simulate_agent(&task, ModelId::RwPm, &params, run as u32, derive_seed(7, run, 1))
                .expect("valid params")
        })
        .collect();

    let curve = regret_curve(&transcripts, ArmFilter::All).expect("nonempty");
    println!("expected regret by casino visit ({n_runs} runs x 4 casinos):");
    for p in curve.points.iter().step_by(4) {
        println!(
            "  visit {:2}  {:.4} ± {:.4}",
            p.trial, p.mean, p.ci_half
        );
    }
    println!("  final visit {:.4}", curve.final_mean());

    let path = std::env::temp_dir().join("banditlab_cogsim_runs.jsonl");
    let mut buf = Vec::new();
    write_transcripts(&mut buf, &transcripts).unwrap();
    std::fs::write(&path, buf).unwrap();
    println!("wrote {} transcripts to {}", transcripts.len(), path.display());
}
