//! Declarative experiment configs and the orchestration behind the CLI
//! subcommands. Everything an invocation produces is derivable from
//! `(config, seed)`; the config hash is recorded in every manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    learning_rate_summary, paired_t_test, regret_curve, report, AnalysisError, ArmFilter,
    CurveSummary, Manifest, ReportBundle,
};
use crate::cogmodel::{simulate_agent, CogError, ModelId, ParamVector};
use crate::fitting::{compare_models, derive_seed, ComparisonResult, FitConfig, FitError, PriorSpec};
use crate::llm_io::{ingest, run_session, write_transcripts, IngestError, SessionError};
use crate::metarl::{
    evaluate, train_until, AgentCheckpoint, AgentConfig, MetarlError, TrainLogEntry,
};
use crate::tasks::{build_task, TaskError, TaskId, Transcript, TrialKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad configuration or arguments (exit code 1).
    #[error("usage: {0}")]
    Usage(String),
    /// Runtime failure (exit code 2).
    #[error("{0}")]
    Runtime(String),
    /// Some runs in a batch failed but others succeeded (exit code 3).
    #[error("partial failure: {failed} of {total} runs failed; first error: {first_error}")]
    Partial {
        failed: usize,
        total: usize,
        first_error: String,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Runtime(_) => 2,
            PipelineError::Partial { .. } => 3,
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<TaskError> for PipelineError {
    fn from(e: TaskError) -> Self {
        PipelineError::Usage(e.to_string())
    }
}
impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::runtime(e)
    }
}
impl From<CogError> for PipelineError {
    fn from(e: CogError) -> Self {
        PipelineError::runtime(e)
    }
}
impl From<FitError> for PipelineError {
    fn from(e: FitError) -> Self {
        PipelineError::runtime(e)
    }
}
impl From<MetarlError> for PipelineError {
    fn from(e: MetarlError) -> Self {
        PipelineError::runtime(e)
    }
}
impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::runtime(e)
    }
}
impl From<AnalysisError> for PipelineError {
    fn from(e: AnalysisError) -> Self {
        PipelineError::runtime(e)
    }
}

/// Which agent generates behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Cogsim,
    Metarl,
    LlmEndpoint,
    Ingest,
}

/// Cognitive-model simulator settings (the generative side of recovery
/// studies). Defaults are the canonical asymmetric battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CogsimConfig {
    pub model: String,
    pub rates: Vec<f64>,
    pub beta: f64,
}

impl Default for CogsimConfig {
    fn default() -> Self {
        CogsimConfig {
            model: "RWpm".to_string(),
            rates: vec![0.6, 0.2],
            beta: 10.0,
        }
    }
}

/// Simplex-search settings; `n_restarts` counts prior-mode plus sampled
/// starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_restarts: usize,
    pub max_iters: usize,
    pub ftol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = FitConfig::default();
        OptimizerConfig {
            n_restarts: d.n_restarts,
            max_iters: d.max_iters,
            ftol: d.ftol,
        }
    }
}

/// Meta-RL overrides on top of the per-task defaults, plus artifact paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MetarlSection {
    pub episodes_total: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub gamma: Option<f64>,
    pub critic_weight: Option<f64>,
    pub entropy_start: Option<f64>,
    pub ff_dim: Option<usize>,
    /// Checkpoint path; defaults to `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Continue training from the existing checkpoint instead of starting
    /// fresh.
    pub resume: bool,
    /// Evaluate with argmax actions instead of sampling.
    pub greedy_eval: bool,
}

/// Which blocks enter fitting and comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockFilterChoice {
    /// The per-task analysis arm: everything for Task 1, full-feedback
    /// blocks for Task 2, mixed-choice blocks for Task 3.
    #[default]
    Auto,
    All,
    Partial,
    Full,
    FreeBlocks,
    MixedBlocks,
}

impl BlockFilterChoice {
    pub fn resolve(self, task: TaskId) -> ArmFilter {
        match self {
            BlockFilterChoice::Auto => match task {
                TaskId::Casinos => ArmFilter::All,
                TaskId::Counterfactual => ArmFilter::Full,
                TaskId::Agency => ArmFilter::MixedBlocks,
            },
            BlockFilterChoice::All => ArmFilter::All,
            BlockFilterChoice::Partial => ArmFilter::Partial,
            BlockFilterChoice::Full => ArmFilter::Full,
            BlockFilterChoice::FreeBlocks => ArmFilter::FreeBlocks,
            BlockFilterChoice::MixedBlocks => ArmFilter::MixedBlocks,
        }
    }
}

/// One declarative experiment. A bare `task = N` config reproduces the
/// published setup for that task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: u8,
    pub agent: AgentKind,
    pub n_runs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Report folder name; defaults to `task<N>_<agent>`.
    pub experiment: Option<String>,
    /// Model set for fitting; empty means the task's published pair.
    pub models: Vec<String>,
    pub block_filter: BlockFilterChoice,
    pub cogsim: CogsimConfig,
    pub priors: PriorSpec,
    pub optimizer: OptimizerConfig,
    pub metarl: MetarlSection,
    pub endpoint: crate::llm_io::EndpointConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: 1,
            agent: AgentKind::Cogsim,
            n_runs: 50,
            seed: 0,
            out_dir: PathBuf::from("out"),
            experiment: None,
            models: Vec::new(),
            block_filter: BlockFilterChoice::Auto,
            cogsim: CogsimConfig::default(),
            priors: PriorSpec::default(),
            optimizer: OptimizerConfig::default(),
            metarl: MetarlSection::default(),
            endpoint: crate::llm_io::EndpointConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Usage(format!("cannot read config {path:?}: {e}")))?;
        toml::from_str(&text).map_err(|e| PipelineError::Usage(format!("config {path:?}: {e}")))
    }

    pub fn task_id(&self) -> Result<TaskId, PipelineError> {
        Ok(TaskId::try_from(self.task)?)
    }

    pub fn experiment_name(&self) -> String {
        self.experiment.clone().unwrap_or_else(|| {
            let agent = match self.agent {
                AgentKind::Cogsim => "cogsim",
                AgentKind::Metarl => "metarl",
                AgentKind::LlmEndpoint => "llm",
                AgentKind::Ingest => "ingested",
            };
            format!("task{}_{agent}", self.task)
        })
    }

    /// Hash of the canonical serialized config; recorded in manifests.
    /// The output directory does not enter the hash: it names where
    /// results land, not what the experiment is.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let text = toml::to_string(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn fit_models(&self) -> Result<Vec<ModelId>, PipelineError> {
        if self.models.is_empty() {
            return Ok(match self.task_id()? {
                TaskId::Casinos => vec![ModelId::Rw, ModelId::RwPm],
                TaskId::Counterfactual => vec![ModelId::Full4a, ModelId::Confirm2a],
                TaskId::Agency => vec![ModelId::Agency3a, ModelId::Agency4a],
            });
        }
        self.models
            .iter()
            .map(|s| {
                s.parse::<ModelId>()
                    .map_err(|e| PipelineError::Usage(e.to_string()))
            })
            .collect()
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            n_restarts: self.optimizer.n_restarts,
            seed: derive_seed(self.seed, 0xF17, 0),
            max_iters: self.optimizer.max_iters,
            ftol: self.optimizer.ftol,
        }
    }

    pub fn agent_config(&self) -> Result<AgentConfig, PipelineError> {
        let mut cfg = AgentConfig::for_task(self.task_id()?);
        let m = &self.metarl;
        if let Some(v) = m.episodes_total {
            cfg.episodes_total = v;
        }
        if let Some(v) = m.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = m.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = m.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = m.critic_weight {
            cfg.critic_weight = v;
        }
        if let Some(v) = m.entropy_start {
            cfg.entropy_start = v;
        }
        if let Some(v) = m.ff_dim {
            cfg.ff_dim = v;
        }
        Ok(cfg)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.metarl
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    pub fn transcripts_dir(&self) -> PathBuf {
        self.out_dir.join("transcripts")
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_transcript_file(dir: &Path, run: usize, t: &Transcript) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("run_{run:03}.jsonl"));
    let mut buf = Vec::new();
    write_transcripts(&mut buf, std::slice::from_ref(t)).map_err(PipelineError::runtime)?;
    fs::write(&path, buf)?;
    Ok(path)
}

/// Outcome of a batch simulation.
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub files: Vec<PathBuf>,
    pub failures: Vec<(usize, String)>,
}

/// Simulate (or query) `n_runs` agents on the configured task and write
/// one transcript file per run.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<SimulateSummary, PipelineError> {
    let task_id = config.task_id()?;
    let dir = config.transcripts_dir();
    match config.agent {
        AgentKind::Cogsim => {
            let model: ModelId = config
                .cogsim
                .model
                .parse()
                .map_err(|e: CogError| PipelineError::Usage(e.to_string()))?;
            let params = ParamVector::new(config.cogsim.rates.clone(), config.cogsim.beta);
            params
                .validate(model)
                .map_err(|e| PipelineError::Usage(e.to_string()))?;
            let transcripts: Vec<Transcript> = (0..config.n_runs)
                .into_par_iter()
                .map(|run| {
                    let task = build_task(task_id.as_u8(), derive_seed(config.seed, run as u64, 10))
                        .expect("task id validated");
                    simulate_agent(
                        &task,
                        model,
                        &params,
                        run as u32,
                        derive_seed(config.seed, run as u64, 11),
                    )
                    .expect("params validated")
                })
                .collect();
            let files = transcripts
                .iter()
                .enumerate()
                .map(|(run, t)| write_transcript_file(&dir, run, t))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SimulateSummary {
                files,
                failures: Vec::new(),
            })
        }
        AgentKind::Metarl => {
            let path = config.checkpoint_path();
            if !path.exists() {
                return Err(PipelineError::Usage(format!(
                    "no checkpoint at {path:?}; run `banditlab train` first"
                )));
            }
            let checkpoint = AgentCheckpoint::load(&path)?;
            let task = build_task(task_id.as_u8(), derive_seed(config.seed, 0, 12))?;
            let transcripts = evaluate(
                &checkpoint,
                &task,
                config.n_runs,
                derive_seed(config.seed, 0, 13),
                config.metarl.greedy_eval,
            )?;
            let files = transcripts
                .iter()
                .enumerate()
                .map(|(run, t)| write_transcript_file(&dir, run, t))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SimulateSummary {
                files,
                failures: Vec::new(),
            })
        }
        AgentKind::LlmEndpoint => {
            #[cfg(not(feature = "live-endpoint"))]
            {
                Err(PipelineError::Usage(
                    "built without the live-endpoint feature".to_string(),
                ))
            }
            #[cfg(feature = "live-endpoint")]
            {
                config
                    .endpoint
                    .validate()
                    .map_err(PipelineError::Usage)?;
                let mut files = Vec::new();
                let mut failures = Vec::new();
                for run in 0..config.n_runs {
                    let task =
                        build_task(task_id.as_u8(), derive_seed(config.seed, run as u64, 10))?;
                    let mut client = crate::llm_io::HttpEndpoint::new(config.endpoint.clone())
                        .map_err(PipelineError::runtime)?;
                    match run_session(
                        &task,
                        &mut client,
                        run as u32,
                        derive_seed(config.seed, run as u64, 11),
                        config.endpoint.max_retries,
                        config.endpoint.backoff_ms,
                    ) {
                        Ok(t) => files.push(write_transcript_file(&dir, run, &t)?),
                        Err(e) => failures.push((run, e.to_string())),
                    }
                }
                summarize_batch(files, failures, config.n_runs)
            }
        }
        AgentKind::Ingest => Err(PipelineError::Usage(
            "agent `ingest` does not simulate; use the `ingest` subcommand".to_string(),
        )),
    }
}

fn summarize_batch(
    files: Vec<PathBuf>,
    failures: Vec<(usize, String)>,
    total: usize,
) -> Result<SimulateSummary, PipelineError> {
    if failures.is_empty() {
        return Ok(SimulateSummary { files, failures });
    }
    if files.is_empty() {
        return Err(PipelineError::Runtime(format!(
            "all {total} runs failed; first error: {}",
            failures[0].1
        )));
    }
    Err(PipelineError::Partial {
        failed: failures.len(),
        total,
        first_error: failures[0].1.clone(),
    })
}

/// Run a scripted mock session battery (for demos and tests); the mock
/// plays the machine with the best observed mean.
pub fn simulate_mock_llm(
    config: &ExperimentConfig,
) -> Result<Vec<Transcript>, PipelineError> {
    let task_id = config.task_id()?;
    let results: Vec<Result<Transcript, SessionError>> = (0..config.n_runs)
        .into_par_iter()
        .map(|run| {
            let task = build_task(task_id.as_u8(), derive_seed(config.seed, run as u64, 10))
                .expect("valid task");
            let mut client = crate::llm_io::ScriptedEndpoint::new(
                crate::llm_io::ScriptedPolicy::HighestMean,
            );
            run_session(
                &task,
                &mut client,
                run as u32,
                derive_seed(config.seed, run as u64, 11),
                0,
                0,
            )
        })
        .collect();
    results
        .into_iter()
        .map(|r| r.map_err(PipelineError::runtime))
        .collect()
}

/// Train (or resume) the Meta-RL agent and write the checkpoint plus a
/// training log.
pub fn cmd_train(
    config: &ExperimentConfig,
    progress: Option<&mut dyn FnMut(TrainLogEntry)>,
) -> Result<PathBuf, PipelineError> {
    let agent_config = config.agent_config()?;
    let path = config.checkpoint_path();
    fs::create_dir_all(config.out_dir.as_path())?;
    let start = if config.metarl.resume && path.exists() {
        let ck = AgentCheckpoint::load(&path)?;
        if ck.config != agent_config {
            return Err(PipelineError::Usage(
                "checkpoint config differs from the requested config; cannot resume".to_string(),
            ));
        }
        ck
    } else {
        AgentCheckpoint::init(agent_config.clone(), derive_seed(config.seed, 0xA6E27, 0))
    };
    if agent_config.episodes_total == 0 {
        eprintln!("warning: episodes_total = 0; writing an untrained checkpoint");
    }
    let mut log: Vec<TrainLogEntry> = Vec::new();
    let mut fallback = |e: TrainLogEntry| log.push(e);
    let checkpoint = match progress {
        Some(cb) => {
            let mut tee = |e: TrainLogEntry| {
                log.push(e);
                cb(e);
            };
            train_until(start, usize::MAX, &mut tee)?
        }
        None => train_until(start, usize::MAX, &mut fallback)?,
    };
    checkpoint.save(&path)?;
    let log_path = config.out_dir.join("training_log.csv");
    let mut text = String::from("episode,mean_reward,loss,entropy_coef\n");
    for e in &log {
        text.push_str(&format!(
            "{},{},{},{}\n",
            e.episode, e.mean_reward, e.loss, e.entropy_coef
        ));
    }
    // Resumed runs append to the existing log.
    if config.metarl.resume && log_path.exists() {
        let mut existing = fs::read_to_string(&log_path)?;
        existing.push_str(text.trim_start_matches("episode,mean_reward,loss,entropy_coef\n"));
        fs::write(&log_path, existing)?;
    } else {
        fs::write(&log_path, text)?;
    }
    Ok(path)
}

fn load_transcripts(
    config: &ExperimentConfig,
    paths: &[PathBuf],
) -> Result<Vec<Transcript>, PipelineError> {
    let mut paths = paths.to_vec();
    if paths.is_empty() {
        let dir = config.transcripts_dir();
        if !dir.exists() {
            return Err(PipelineError::Usage(format!(
                "no transcript files given and {dir:?} does not exist"
            )));
        }
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                paths.push(p);
            }
        }
        paths.sort();
    }
    if paths.is_empty() {
        return Err(PipelineError::Usage("no transcript files found".to_string()));
    }
    let mut transcripts = Vec::new();
    for p in &paths {
        transcripts.extend(ingest(p)?);
    }
    Ok(transcripts)
}

/// Fit-and-compare over the configured arm of the given transcripts.
pub fn run_comparison(
    config: &ExperimentConfig,
    transcripts: &[Transcript],
) -> Result<ComparisonResult, PipelineError> {
    let task_id = config.task_id()?;
    let models = config.fit_models()?;
    let arm = config.block_filter.resolve(task_id);
    let spec = build_task(task_id.as_u8(), 0)?;
    let keep: Vec<bool> = spec.blocks.iter().map(|b| arm.matches(b)).collect();
    let filtered: Vec<Transcript> = transcripts
        .iter()
        .map(|t| t.filter_blocks(|b| keep[b as usize]))
        .collect();
    Ok(compare_models(
        &filtered,
        &models,
        &config.priors,
        &config.fit_config(),
    )?)
}

/// Fit every configured model to every transcript and write per-model fit
/// tables (with per-run posterior probabilities across the model set).
pub fn cmd_fit(
    config: &ExperimentConfig,
    paths: &[PathBuf],
) -> Result<Manifest, PipelineError> {
    let transcripts = load_transcripts(config, paths)?;
    let comparison = run_comparison(config, &transcripts)?;
    let bundle = ReportBundle {
        experiment: config.experiment_name(),
        comparisons: vec![("fits".to_string(), comparison)],
        ..ReportBundle::default()
    };
    Ok(report(&bundle, &config.out_dir, &config.hash(), config.seed)?)
}

/// Model comparison: everything `fit` writes plus the posterior
/// probability summary is the core artifact here.
pub fn cmd_compare(
    config: &ExperimentConfig,
    paths: &[PathBuf],
) -> Result<(ComparisonResult, Manifest), PipelineError> {
    let transcripts = load_transcripts(config, paths)?;
    let comparison = run_comparison(config, &transcripts)?;
    let bundle = ReportBundle {
        experiment: config.experiment_name(),
        comparisons: vec![("comparison".to_string(), comparison.clone())],
        ..ReportBundle::default()
    };
    let manifest = report(&bundle, &config.out_dir, &config.hash(), config.seed)?;
    Ok((comparison, manifest))
}

/// Regret curves for the task's natural arms.
fn task_curves(
    task_id: TaskId,
    transcripts: &[Transcript],
) -> Result<Vec<(String, CurveSummary)>, PipelineError> {
    let arms: Vec<(&str, ArmFilter)> = match task_id {
        TaskId::Casinos => vec![("regret", ArmFilter::All)],
        TaskId::Counterfactual => vec![
            ("regret_partial", ArmFilter::Partial),
            ("regret_full", ArmFilter::Full),
        ],
        TaskId::Agency => vec![
            ("regret_free_blocks", ArmFilter::FreeBlocks),
            ("regret_mixed_blocks", ArmFilter::MixedBlocks),
        ],
    };
    arms.into_iter()
        .map(|(name, arm)| Ok((name.to_string(), regret_curve(transcripts, arm)?)))
        .collect()
}

/// First-position vs last-position regret samples, pooled over
/// (run, block) pairs, for the improvement test.
fn first_last_regret(
    transcripts: &[Transcript],
    arm: ArmFilter,
) -> Result<(Vec<f64>, Vec<f64>), PipelineError> {
    let first = transcripts.first().ok_or(AnalysisError::EmptySelection)?;
    let spec = build_task(first.task_id.as_u8(), 0)?;
    let mut firsts = Vec::new();
    let mut lasts = Vec::new();
    for t in transcripts {
        for block in &spec.blocks {
            if !arm.matches(block) {
                continue;
            }
            let free: Vec<_> = t
                .records
                .iter()
                .filter(|r| r.block_id == block.block_id && r.kind == TrialKind::Free)
                .collect();
            if let (Some(a), Some(b)) = (free.first(), free.last()) {
                firsts.push(crate::tasks::expected_regret(
                    block,
                    a.chosen_index().expect("validated"),
                ));
                lasts.push(crate::tasks::expected_regret(
                    block,
                    b.chosen_index().expect("validated"),
                ));
            }
        }
    }
    Ok((firsts, lasts))
}

/// The full report: regret curves per arm, model comparison, learning-rate
/// summaries for every fitted model, and the first-vs-last improvement
/// test.
pub fn cmd_report(
    config: &ExperimentConfig,
    paths: &[PathBuf],
) -> Result<Manifest, PipelineError> {
    let task_id = config.task_id()?;
    let transcripts = load_transcripts(config, paths)?;
    let comparison = run_comparison(config, &transcripts)?;
    let models = config.fit_models()?;

    let mut rate_tables = Vec::new();
    for (idx, model) in models.iter().enumerate() {
        let fits: Vec<_> = comparison
            .rows
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|row| row.fits[idx].clone())
            .collect();
        if !fits.is_empty() {
            rate_tables.push((
                format!("rates_{model}"),
                learning_rate_summary(&fits, *model)?,
            ));
        }
    }

    let mut tests = Vec::new();
    let arm = config.block_filter.resolve(task_id);
    let (firsts, lasts) = first_last_regret(&transcripts, arm)?;
    if firsts.len() >= 2 {
        tests.push((
            "regret_first_vs_last".to_string(),
            paired_t_test(&firsts, &lasts)?,
        ));
    }

    let bundle = ReportBundle {
        experiment: config.experiment_name(),
        curves: task_curves(task_id, &transcripts)?,
        rate_tables,
        comparisons: vec![("comparison".to_string(), comparison)],
        tests,
    };
    Ok(report(&bundle, &config.out_dir, &config.hash(), config.seed)?)
}

/// Render the prompt sequence a session would see, using a scripted
/// highest-mean player, and write one text file per run.
pub fn cmd_gen_prompts(config: &ExperimentConfig) -> Result<Vec<PathBuf>, PipelineError> {
    use crate::llm_io::{CompletionClient, ScriptedEndpoint, ScriptedPolicy, TransportError};

    /// Wraps the scripted endpoint and keeps every prompt it saw.
    struct Recorder {
        inner: ScriptedEndpoint,
        prompts: Vec<String>,
    }
    impl CompletionClient for Recorder {
        fn complete(&mut self, prompt: &str) -> Result<String, TransportError> {
            self.prompts.push(prompt.to_string());
            self.inner.complete(prompt)
        }
    }

    let task_id = config.task_id()?;
    let dir = config.out_dir.join("prompts");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for run in 0..config.n_runs.max(1).min(5) {
        let task = build_task(task_id.as_u8(), derive_seed(config.seed, run as u64, 10))?;
        let mut client = Recorder {
            inner: ScriptedEndpoint::new(ScriptedPolicy::HighestMean),
            prompts: Vec::new(),
        };
        run_session(
            &task,
            &mut client,
            run as u32,
            derive_seed(config.seed, run as u64, 11),
            0,
            0,
        )
        .map_err(PipelineError::runtime)?;
        let path = dir.join(format!("task{}_run{run:02}.txt", config.task));
        let mut text = String::new();
        for (i, prompt) in client.prompts.iter().enumerate() {
            text.push_str(&format!("=== prompt {} ===\n{prompt}\n\n", i + 1));
        }
        fs::write(&path, text)?;
        files.push(path);
    }
    Ok(files)
}

/// Validate an external transcript file and write a normalized copy per
/// run under the output directory.
pub fn cmd_ingest(
    config: &ExperimentConfig,
    path: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let transcripts = ingest(path)?;
    let dir = config.transcripts_dir();
    transcripts
        .iter()
        .enumerate()
        .map(|(run, t)| write_transcript_file(&dir, run, t))
        .collect()
}
