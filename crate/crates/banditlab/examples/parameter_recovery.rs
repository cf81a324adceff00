//! Parameter recovery: simulate agents with known learning rates, fit them
//! back by MAP, and compare the recovered battery means to the truth.
//!
//! ```bash
//! cargo run --example parameter_recovery
//! ```

use banditlab::analysis::learning_rate_summary;
use banditlab::cogmodel::{simulate_agent, ModelId, ParamVector};
use banditlab::fitting::{derive_seed, map_fit, FitConfig, PriorSpec};
use banditlab::tasks::build_task;

fn main() {
    let truth = ParamVector::new(vec![0.6, 0.2], 10.0);
    let n_runs = 20;
    let priors = PriorSpec::default();
    let config = FitConfig {
        n_restarts: 8,
        seed: 11,
        ..FitConfig::default()
    };

    let fits: Vec<_> = (0..n_runs)
        .map(|run| {
            let task = build_task(1, derive_seed(21, run, 0)).unwrap();
            let t = simulate_agent(&task, ModelId::RwPm, &truth, run as u32, derive_seed(21, run, 1))
                .unwrap();
            map_fit(&t, ModelId::RwPm, &priors, &config).unwrap()
        })
        .collect();

    let summary = learning_rate_summary(&fits, ModelId::RwPm).unwrap();
    println!("truth:   alpha+ = 0.600, alpha- = 0.200, beta = 10.0");
    for (name, s) in &summary.slots {
        println!("fitted:  {name} = {:.3} ± {:.3}", s.mean, s.ci_half);
    }
    println!("fitted:  beta = {:.2} ± {:.2}", summary.beta.mean, summary.beta.ci_half);
    let (a, b, test) = &summary.pair_tests[0];
    println!(
        "paired {a} vs {b}: t({}) = {:.2}, p = {:.2e}",
        test.df, test.t, test.p
    );
}
