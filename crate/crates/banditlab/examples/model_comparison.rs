//! Model recovery: asymmetric data should prefer RW± by posterior
//! probability, symmetric data should prefer the simpler RW.
//!
//! ```bash
//! cargo run --example model_comparison
//! ```

use banditlab::cogmodel::{simulate_agent, ModelId, ParamVector};
use banditlab::fitting::{compare_models, derive_seed, FitConfig, PriorSpec};
use banditlab::tasks::build_task;

fn battery(model: ModelId, params: &ParamVector, base_seed: u64, n_runs: u64) -> Vec<banditlab::tasks::Transcript> {
    (0..n_runs)
        .map(|run| {
            let task = build_task(1, derive_seed(base_seed, run, 0)).unwrap();
            simulate_agent(&task, model, params, run as u32, derive_seed(base_seed, run, 1)).unwrap()
        })
        .collect()
}

fn main() {
    let models = [ModelId::Rw, ModelId::RwPm];
    let priors = PriorSpec::default();
    let config = FitConfig {
        n_restarts: 8,
        seed: 5,
        ..FitConfig::default()
    };

    let asymmetric = battery(ModelId::RwPm, &ParamVector::new(vec![0.6, 0.2], 10.0), 100, 15);
    let cmp = compare_models(&asymmetric, &models, &priors, &config).unwrap();
    println!("data generated by RWpm(0.6, 0.2, beta 10):");
    for (m, s) in cmp.models.iter().zip(&cmp.mean_pp) {
        println!("  mean PP({m}) = {:.3} ± {:.3}", s.mean, s.ci_half);
    }

    let symmetric = battery(ModelId::Rw, &ParamVector::new(vec![0.4], 5.0), 200, 15);
    let cmp = compare_models(&symmetric, &models, &priors, &config).unwrap();
    println!("data generated by RW(0.4, beta 5):");
    for (m, s) in cmp.models.iter().zip(&cmp.mean_pp) {
        println!("  mean PP({m}) = {:.3} ± {:.3}", s.mean, s.ci_half);
    }
}
