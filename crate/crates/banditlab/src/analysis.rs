//! Aggregation of transcripts and fits into the pipeline's quantitative
//! outputs: regret curves with CIs, learning-rate summaries, significance
//! tests, and plot-ready report files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cogmodel::ModelId;
use crate::fitting::{ComparisonResult, FitResult};
use crate::stats::{mean, mean_ci_95, sample_sd, two_sided_p, MeanCi};
use crate::tasks::{build_task, expected_regret, BlockSpec, Transcript, TrialKind};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty selection: no matching records")]
    EmptySelection,
    #[error("paired test requires equal lengths >= 2, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("insufficient data: need at least {0} values")]
    TooFewSamples(usize),
    #[error("fit list mixes model ids ({0} vs {1})")]
    ModelMismatch(ModelId, ModelId),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which blocks enter an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmFilter {
    All,
    /// Partial-feedback blocks only.
    Partial,
    /// Full-feedback blocks only.
    Full,
    /// Blocks without forced trials.
    FreeBlocks,
    /// Blocks containing forced trials.
    MixedBlocks,
}

impl ArmFilter {
    pub fn matches(self, block: &BlockSpec) -> bool {
        match self {
            ArmFilter::All => true,
            ArmFilter::Partial => block.feedback_mode == crate::tasks::FeedbackMode::Partial,
            ArmFilter::Full => block.feedback_mode == crate::tasks::FeedbackMode::Full,
            ArmFilter::FreeBlocks => block.n_free() == block.n_trials,
            ArmFilter::MixedBlocks => block.n_free() < block.n_trials,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based free-trial position within a block.
    pub trial: u32,
    pub mean: f64,
    pub ci_half: f64,
    pub sem: f64,
    pub n: usize,
}

/// Per-trial-position aggregate across runs and blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub points: Vec<CurvePoint>,
}

impl CurveSummary {
    pub fn final_mean(&self) -> f64 {
        self.points.last().map(|p| p.mean).unwrap_or(f64::NAN)
    }

    /// Mean of the last `k` trial positions.
    pub fn tail_mean(&self, k: usize) -> f64 {
        let n = self.points.len();
        let tail = &self.points[n.saturating_sub(k)..];
        mean(&tail.iter().map(|p| p.mean).collect::<Vec<_>>())
    }
}

/// Expected-regret curve over free-trial positions. Each `(run, block)`
/// pair contributes one sample per position; forced trials are observation
/// only and do not enter the curve.
pub fn regret_curve(
    transcripts: &[Transcript],
    filter: ArmFilter,
) -> Result<CurveSummary, AnalysisError> {
    let first = transcripts.first().ok_or(AnalysisError::EmptySelection)?;
    let spec = build_task(first.task_id.as_u8(), 0).expect("valid task id");
    let mut per_position: Vec<Vec<f64>> = Vec::new();
    for t in transcripts {
        for block in &spec.blocks {
            if !filter.matches(block) {
                continue;
            }
            let mut position = 0usize;
            for r in t.records.iter().filter(|r| r.block_id == block.block_id) {
                if r.kind != TrialKind::Free {
                    continue;
                }
                let chosen = r.chosen_index().expect("validated transcript");
                if per_position.len() <= position {
                    per_position.resize(position + 1, Vec::new());
                }
                per_position[position].push(expected_regret(block, chosen));
                position += 1;
            }
        }
    }
    if per_position.is_empty() {
        return Err(AnalysisError::EmptySelection);
    }
    let points = per_position
        .iter()
        .enumerate()
        .map(|(i, xs)| {
            let s = mean_ci_95(xs);
            CurvePoint {
                trial: i as u32 + 1,
                mean: s.mean,
                ci_half: s.ci_half,
                sem: s.sem,
                n: s.n,
            }
        })
        .collect();
    Ok(CurveSummary { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestVariant {
    Paired,
    Independent,
}

/// Student-t test result, two-sided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_diff: f64,
    pub variant: TestVariant,
}

/// Paired Student-t test on equal-length samples.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TestResult, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewSamples(2));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let m = mean(&diffs);
    let sd = sample_sd(&diffs);
    let df = n - 1.0;
    let t = if sd == 0.0 {
        if m == 0.0 {
            0.0
        } else {
            f64::INFINITY * m.signum()
        }
    } else {
        m / (sd / n.sqrt())
    };
    Ok(TestResult {
        t,
        df,
        p: two_sided_p(t, df),
        mean_diff: m,
        variant: TestVariant::Paired,
    })
}

/// Independent two-sample Student-t test with pooled variance
/// (df = n1 + n2 - 2).
pub fn independent_t_test(x: &[f64], y: &[f64]) -> Result<TestResult, AnalysisError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(AnalysisError::TooFewSamples(2));
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (m1, m2) = (mean(x), mean(y));
    let (s1, s2) = (sample_sd(x), sample_sd(y));
    let df = n1 + n2 - 2.0;
    let pooled = (((n1 - 1.0) * s1 * s1) + ((n2 - 1.0) * s2 * s2)) / df;
    let se = (pooled * (1.0 / n1 + 1.0 / n2)).sqrt();
    let diff = m1 - m2;
    let t = if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY * diff.signum()
        }
    } else {
        diff / se
    };
    Ok(TestResult {
        t,
        df,
        p: two_sided_p(t, df),
        mean_diff: diff,
        variant: TestVariant::Independent,
    })
}

/// Per-slot aggregate over a battery of fits of the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub model_id: ModelId,
    pub slots: Vec<(String, MeanCi)>,
    /// Paired t-tests for every slot pair, keyed by the two slot names.
    pub pair_tests: Vec<(String, String, TestResult)>,
    pub beta: MeanCi,
}

/// Summarize fitted learning rates: per-slot mean and CI plus the paired
/// slot-vs-slot tests the analyses report.
pub fn learning_rate_summary(
    fits: &[FitResult],
    model: ModelId,
) -> Result<RateSummary, AnalysisError> {
    if fits.is_empty() {
        return Err(AnalysisError::EmptySelection);
    }
    if let Some(bad) = fits.iter().find(|f| f.model_id != model) {
        return Err(AnalysisError::ModelMismatch(bad.model_id, model));
    }
    let names = model.rate_names();
    let columns: Vec<Vec<f64>> = (0..model.n_rates())
        .map(|s| fits.iter().map(|f| f.params.rates[s]).collect())
        .collect();
    let slots = names
        .iter()
        .zip(&columns)
        .map(|(name, col)| (name.to_string(), mean_ci_95(col)))
        .collect();
    let mut pair_tests = Vec::new();
    for a in 0..model.n_rates() {
        for b in a + 1..model.n_rates() {
            if let Ok(test) = paired_t_test(&columns[a], &columns[b]) {
                pair_tests.push((names[a].to_string(), names[b].to_string(), test));
            }
        }
    }
    let betas: Vec<f64> = fits.iter().map(|f| f.params.beta).collect();
    Ok(RateSummary {
        model_id: model,
        slots,
        pair_tests,
        beta: mean_ci_95(&betas),
    })
}

/// Everything one experiment wants written to disk.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportBundle {
    pub experiment: String,
    pub curves: Vec<(String, CurveSummary)>,
    pub rate_tables: Vec<(String, RateSummary)>,
    pub comparisons: Vec<(String, ComparisonResult)>,
    pub tests: Vec<(String, TestResult)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: String,
}

/// Machine-readable index of everything a report run produced. The
/// timestamp lives here and nowhere else, so all other outputs are
/// byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub generated_unix_ms: u128,
    pub artifacts: Vec<ManifestEntry>,
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), AnalysisError> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}

fn fit_row(f: &FitResult, pp: f64) -> String {
    let rates = f
        .params
        .rates
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "{},{},{},{},{},{},{}",
        f.model_id, f.run_id, rates, f.params.beta, f.log_likelihood, f.bic, pp
    )
}

/// Write the bundle's tables and curves under `out_root/reports/<experiment>/`
/// and return the manifest (also written there as `manifest.json`).
pub fn report(
    bundle: &ReportBundle,
    out_root: &Path,
    config_hash: &str,
    seed: u64,
) -> Result<Manifest, AnalysisError> {
    let dir = out_root.join("reports").join(&bundle.experiment);
    fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::new();
    let add = |artifacts: &mut Vec<ManifestEntry>, path: &Path, kind: &str| {
        artifacts.push(ManifestEntry {
            path: path
                .strip_prefix(out_root)
                .unwrap_or(path)
                .to_string_lossy()
                .into_owned(),
            kind: kind.to_string(),
        });
    };

    for (name, curve) in &bundle.curves {
        let path = dir.join(format!("{name}.csv"));
        let rows: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{},{},{},{},{}", p.trial, p.mean, p.ci_half, p.sem, p.n))
            .collect();
        write_csv(&path, "trial,mean,ci95_half,sem,n", &rows)?;
        add(&mut artifacts, &path, "curve");
    }

    for (name, table) in &bundle.rate_tables {
        let path = dir.join(format!("{name}.csv"));
        let mut rows: Vec<String> = table
            .slots
            .iter()
            .map(|(slot, s)| format!("{slot},{},{},{},{}", s.mean, s.ci_half, s.sem, s.n))
            .collect();
        rows.push(format!(
            "beta,{},{},{},{}",
            table.beta.mean, table.beta.ci_half, table.beta.sem, table.beta.n
        ));
        write_csv(&path, "slot,mean,ci95_half,sem,n", &rows)?;
        add(&mut artifacts, &path, "rate_table");

        let tests_path = dir.join(format!("{name}_tests.csv"));
        let test_rows: Vec<String> = table
            .pair_tests
            .iter()
            .map(|(a, b, t)| {
                format!(
                    "{a},{b},{},{},{},{},paired",
                    t.t, t.df, t.p, t.mean_diff
                )
            })
            .collect();
        write_csv(&tests_path, "slot_a,slot_b,t,df,p,mean_diff,variant", &test_rows)?;
        add(&mut artifacts, &tests_path, "rate_tests");
    }

    for (name, cmp) in &bundle.comparisons {
        let summary_path = dir.join(format!("{name}_pp_summary.csv"));
        let rows: Vec<String> = cmp
            .models
            .iter()
            .zip(&cmp.mean_pp)
            .map(|(m, s)| format!("{m},{},{},{},{}", s.mean, s.ci_half, s.sem, s.n))
            .collect();
        write_csv(&summary_path, "model_id,mean_pp,ci95_half,sem,n", &rows)?;
        add(&mut artifacts, &summary_path, "pp_summary");

        for (m_idx, model) in cmp.models.iter().enumerate() {
            let path = dir.join(format!("{name}_fits_{model}.csv"));
            let rate_cols = model.rate_names().join(",");
            let header = format!("model_id,run_id,{rate_cols},beta,logL,BIC,PP");
            let rows: Vec<String> = cmp
                .rows
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .map(|row| fit_row(&row.fits[m_idx], row.pps[m_idx]))
                .collect();
            write_csv(&path, &header, &rows)?;
            add(&mut artifacts, &path, "fit_table");
        }
        let failures: Vec<String> = cmp
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| format!("{i},{e}")))
            .collect();
        if !failures.is_empty() {
            let path = dir.join(format!("{name}_failures.csv"));
            write_csv(&path, "transcript_index,error", &failures)?;
            add(&mut artifacts, &path, "fit_failures");
        }
    }

    if !bundle.tests.is_empty() {
        let path = dir.join("tests.csv");
        let rows: Vec<String> = bundle
            .tests
            .iter()
            .map(|(name, t)| {
                let variant = match t.variant {
                    TestVariant::Paired => "paired",
                    TestVariant::Independent => "independent",
                };
                format!("{name},{},{},{},{},{variant}", t.t, t.df, t.p, t.mean_diff)
            })
            .collect();
        write_csv(&path, "name,t,df,p,mean_diff,variant", &rows)?;
        add(&mut artifacts, &path, "tests");
    }

    let manifest = Manifest {
        experiment: bundle.experiment.clone(),
        config_hash: config_hash.to_string(),
        seed,
        generated_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        artifacts,
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cogmodel::{simulate_agent, ModelId, ParamVector};
    use crate::tasks::{AgentTag, TaskState};
    use approx::assert_relative_eq;

    fn uniform_task1_runs(n: usize) -> Vec<Transcript> {
        (0..n)
            .map(|i| {
                let task = build_task(1, i as u64).unwrap();
                let params = ParamVector::new(vec![0.0], 0.0);
                simulate_agent(&task, ModelId::Rw, &params, i as u32, 1000 + i as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn optimal_agent_has_zero_regret_curve() {
        let mut transcripts = Vec::new();
        for i in 0..3 {
            let spec = build_task(1, i).unwrap();
            let best: Vec<usize> = spec
                .blocks
                .iter()
                .map(|b| usize::from(b.win_probs[1] > b.win_probs[0]))
                .collect();
            let mut state = TaskState::new(spec, i as u32, i);
            while let Some(p) = state.current() {
                state.step(best[p.block_id as usize]).unwrap();
            }
            transcripts.push(state.into_transcript(AgentTag::Cogsim, i));
        }
        let curve = regret_curve(&transcripts, ArmFilter::All).unwrap();
        assert_eq!(curve.points.len(), 24);
        for p in &curve.points {
            assert_eq!(p.mean, 0.0);
            assert_eq!(p.n, 12);
        }
    }

    #[test]
    fn uniform_agent_sits_at_analytic_baseline() {
        let transcripts = uniform_task1_runs(50);
        let curve = regret_curve(&transcripts, ArmFilter::All).unwrap();
        assert_eq!(curve.points.len(), 24);
        let grand = mean(&curve.points.iter().map(|p| p.mean).collect::<Vec<_>>());
        assert!((grand - 0.0625).abs() < 0.005, "grand mean {grand}");
        for p in &curve.points {
            assert_eq!(p.n, 200);
            assert!((p.mean - 0.0625).abs() < 0.035, "trial {} mean {}", p.trial, p.mean);
        }
    }

    #[test]
    fn arm_filters_select_the_right_blocks() {
        let task = build_task(3, 0).unwrap();
        let params = ParamVector::new(vec![0.3, 0.2, 0.1], 3.0);
        let t = simulate_agent(&task, ModelId::Agency3a, &params, 0, 5).unwrap();
        let free = regret_curve(std::slice::from_ref(&t), ArmFilter::FreeBlocks).unwrap();
        let mixed = regret_curve(std::slice::from_ref(&t), ArmFilter::MixedBlocks).unwrap();
        // Six blocks of each type, one sample per (run, block) per position.
        assert_eq!(free.points.len(), 40);
        assert_eq!(mixed.points.len(), 40);
        assert_eq!(free.points[0].n, 6);
        assert_eq!(mixed.points[0].n, 6);
    }

    #[test]
    fn paired_t_examples() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(r.t, 2.0 * 3f64.sqrt(), max_relative = 1e-12);
        assert_eq!(r.df, 2.0);
        assert!(r.p < 0.08 && r.p > 0.07, "p = {}", r.p);
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn independent_t_basics() {
        let r = independent_t_test(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(r.df, 6.0);
        let r = independent_t_test(&[5.0, 6.0, 7.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.t > 0.0 && r.p < 0.05);
    }

    /// The t-test must order evidence the same way an exact sign-flip
    /// permutation test does.
    #[test]
    fn t_test_orders_like_permutation_oracle() {
        fn permutation_p(diffs: &[f64]) -> f64 {
            let n = diffs.len();
            let observed = mean(diffs).abs();
            let mut hits = 0usize;
            for mask in 0..(1usize << n) {
                let flipped: Vec<f64> = diffs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                    .collect();
                if mean(&flipped).abs() >= observed - 1e-12 {
                    hits += 1;
                }
            }
            hits as f64 / (1 << n) as f64
        }
        let base = vec![0.1, -0.2, 0.15, 0.05, -0.1, 0.12, 0.2, -0.05];
        let mut results: Vec<(f64, f64)> = Vec::new();
        for shift in [0.0, 0.1, 0.25, 0.5] {
            let x: Vec<f64> = base.iter().map(|d| d + shift).collect();
            let y = vec![0.0; x.len()];
            let t = paired_t_test(&x, &y).unwrap();
            let d: Vec<f64> = x.clone();
            results.push((t.p, permutation_p(&d)));
        }
        for i in 0..results.len() {
            for j in i + 1..results.len() {
                let (ti, pi) = results[i];
                let (tj, pj) = results[j];
                if (pi - pj).abs() > 0.05 {
                    assert_eq!(ti < tj, pi < pj, "t-test p ordering disagrees with oracle");
                }
            }
        }
    }

    #[test]
    fn identical_fits_have_zero_ci() {
        let fit = FitResult {
            model_id: ModelId::RwPm,
            run_id: 0,
            params: ParamVector::new(vec![0.6, 0.2], 4.0),
            log_likelihood: -50.0,
            log_posterior: -52.0,
            bic: 110.0,
            n_choices: 96,
            n_params: 3,
            n_restarts_used: 10,
            converged: true,
        };
        let fits = vec![fit.clone(), fit.clone(), fit];
        let summary = learning_rate_summary(&fits, ModelId::RwPm).unwrap();
        assert!(summary.slots[0].1.ci_half.abs() < 1e-12);
        assert_relative_eq!(summary.slots[1].1.mean, 0.2, max_relative = 1e-12);
        // Identical samples give a zero-variance pair test: t = inf is
        // avoided because the difference is constant and nonzero.
        assert!(summary.pair_tests[0].2.t.is_infinite());
    }

    #[test]
    fn report_writes_deterministic_files() {
        let dir = tempfile::tempdir().unwrap();
        let transcripts = uniform_task1_runs(4);
        let curve = regret_curve(&transcripts, ArmFilter::All).unwrap();
        let bundle = ReportBundle {
            experiment: "demo".into(),
            curves: vec![("regret".into(), curve)],
            ..ReportBundle::default()
        };
        let m1 = report(&bundle, dir.path(), "abc123", 7).unwrap();
        let bytes1 = fs::read(dir.path().join("reports/demo/regret.csv")).unwrap();
        let m2 = report(&bundle, dir.path(), "abc123", 7).unwrap();
        let bytes2 = fs::read(dir.path().join("reports/demo/regret.csv")).unwrap();
        assert_eq!(bytes1, bytes2);
        assert_eq!(m1.artifacts.len(), m2.artifacts.len());
        assert_eq!(m1.config_hash, "abc123");
    }

    #[test]
    fn empty_bundle_reports_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = ReportBundle {
            experiment: "empty".into(),
            ..ReportBundle::default()
        };
        let m = report(&bundle, dir.path(), "h", 0).unwrap();
        assert!(m.artifacts.is_empty());
        assert!(dir.path().join("reports/empty/manifest.json").exists());
    }
}
