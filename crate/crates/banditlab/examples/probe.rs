use banditlab::analysis::{learning_rate_summary, regret_curve, ArmFilter};
use banditlab::cogmodel::ModelId;
use banditlab::fitting::{compare_models, FitConfig, PriorSpec};
use banditlab::metarl::{evaluate, train_until, AgentCheckpoint, AgentConfig};
use banditlab::tasks::{build_task, TaskId};
use std::time::Instant;

fn main() {
    let config = AgentConfig::for_task(TaskId::Casinos);  // full 5000-episode recipe
    let task = build_task(1, 777).unwrap();
    let mut ck = AgentCheckpoint::init(config, 41);
    let start = Instant::now();
    for stop in [1000, 2000, 2500, 3000, 3500, 4000, 4500, 5000] {
        let mut rewards = vec![];
        ck = train_until(ck, stop, &mut |e| rewards.push(e.mean_reward)).unwrap();
        let mean_r: f64 = rewards.iter().rev().take(100).sum::<f64>() / 100.0;
        let runs = evaluate(&ck, &task, 30, 5, false).unwrap();
        let curve = regret_curve(&runs, ArmFilter::All).unwrap();
        println!(
            "[{:7.1}s] ep {:4}  last100 reward {:.3}  tail5 regret {:.4}  first {:.4} last {:.4}",
            start.elapsed().as_secs_f64(), stop, mean_r, curve.tail_mean(5), curve.points[0].mean, curve.final_mean()
        );
        if stop % 1000 == 0 {
            let runs50 = evaluate(&ck, &task, 50, 6, false).unwrap();
            let cmp = compare_models(&runs50, &[ModelId::Rw, ModelId::RwPm], &PriorSpec::default(),
                &FitConfig { n_restarts: 8, seed: 3, ..FitConfig::default() }).unwrap();
            let fits: Vec<_> = cmp.rows.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.fits[1].clone()).collect();
            let s = learning_rate_summary(&fits, ModelId::RwPm).unwrap();
            println!("    PP(RW) {:.3} PP(RWpm) {:.3}  a+ {:.3}±{:.3}  a- {:.3}±{:.3}  beta {:.2}",
                cmp.mean_pp[0].mean, cmp.mean_pp[1].mean,
                s.slots[0].1.mean, s.slots[0].1.ci_half, s.slots[1].1.mean, s.slots[1].1.ci_half, s.beta.mean);
        }
        ck.save(std::path::Path::new("/tmp/probe_task1_full.json")).unwrap();
    }
}
