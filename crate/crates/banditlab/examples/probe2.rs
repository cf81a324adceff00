use banditlab::cogmodel::{simulate_agent, ModelId, ParamVector};
use banditlab::fitting::{compare_models, derive_seed, FitConfig, PriorSpec};
use banditlab::tasks::build_task;

fn main() {
    let models = [ModelId::Rw, ModelId::RwPm];
    let priors = PriorSpec::default();
    let config = FitConfig { seed: 23, ..FitConfig::default() };
    for (ap, am, beta) in [(0.87, 0.10, 10.0), (0.8, 0.15, 10.0), (0.87, 0.10, 6.0)] {
        let gen = ParamVector::new(vec![ap, am], beta);
        let t: Vec<_> = (0..50u64).map(|run| {
            let task = build_task(1, derive_seed(400, run, 0)).unwrap();
            simulate_agent(&task, ModelId::RwPm, &gen, run as u32, derive_seed(400, run, 1)).unwrap()
        }).collect();
        let cmp = compare_models(&t, &models, &priors, &config).unwrap();
        println!("gen ({ap}, {am}, {beta}): PP(RW) {:.3}  PP(RWpm) {:.3}", cmp.mean_pp[0].mean, cmp.mean_pp[1].mean);
    }
}
