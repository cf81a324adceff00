//! Drive the full prompt harness against a scripted endpoint, then fit the
//! resulting behavior. Swap in `HttpEndpoint` for a live model.
//!
//! ```bash
//! cargo run --example mock_llm_session
//! ```

use banditlab::analysis::{regret_curve, ArmFilter};
use banditlab::fitting::{compare_models, derive_seed, FitConfig, PriorSpec};
use banditlab::cogmodel::ModelId;
use banditlab::llm_io::{run_session, ScriptedEndpoint, ScriptedPolicy};
use banditlab::tasks::build_task;

fn main() {
    let n_runs = 10;
    let transcripts: Vec<_> = (0..n_runs)
        .map(|run| {
            let task = build_task(1, derive_seed(3, run, 0)).unwrap();
            // The mock plays the machine with the best observed mean; it
            // parses the rendered prompt just like a model would read it.
            let mut client = ScriptedEndpoint::new(ScriptedPolicy::HighestMean);
            run_session(&task, &mut client, run as u32, derive_seed(3, run, 1), 3, 0).unwrap()
        })
        .collect();

    let curve = regret_curve(&transcripts, ArmFilter::All).unwrap();
    println!(
        "mock endpoint regret: first visit {:.4}, last visit {:.4}",
        curve.points[0].mean,
        curve.final_mean()
    );

    let cmp = compare_models(
        &transcripts,
        &[ModelId::Rw, ModelId::RwPm],
        &PriorSpec::default(),
        &FitConfig {
            n_restarts: 6,
            seed: 2,
            ..FitConfig::default()
        },
    )
    .unwrap();
    for (m, s) in cmp.models.iter().zip(&cmp.mean_pp) {
        println!("mean PP({m}) = {:.3} ± {:.3}", s.mean, s.ci_half);
    }
}
