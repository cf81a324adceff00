//! Thin command-line front end; all logic lives in the library's
//! `pipeline` module.

use std::path::PathBuf;
use std::process::exit;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use banditlab::pipeline::{
    cmd_compare, cmd_fit, cmd_gen_prompts, cmd_ingest, cmd_report, cmd_simulate, cmd_train,
    AgentKind, ExperimentConfig, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "banditlab",
    about = "2AFC bandit tasks, RW-family model fitting, and meta-RL agents",
    version
)]
struct Cli {
    /// Experiment config file (TOML); defaults reproduce the published
    /// setup for the chosen task.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for run-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's task id (1, 2, or 3).
    #[arg(long, global = true)]
    task: Option<u8>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate transcripts from the configured agent.
    Simulate,
    /// Train the Meta-RL agent and write a checkpoint plus training log.
    Train,
    /// Evaluate a trained Meta-RL checkpoint (equivalent to `simulate`
    /// with the metarl agent).
    Evaluate,
    /// Fit the configured model set to transcripts and write fit tables.
    Fit {
        /// Transcript files; defaults to <out>/transcripts/*.jsonl.
        files: Vec<PathBuf>,
    },
    /// Compare models by posterior probability over transcripts.
    Compare {
        files: Vec<PathBuf>,
    },
    /// Write the full report bundle: regret curves, fit tables,
    /// comparisons, learning-rate summaries, and a manifest.
    Report {
        files: Vec<PathBuf>,
    },
    /// Render the prompt sequences a session would see.
    GenPrompts,
    /// Validate an external transcript file and normalize it into the
    /// output directory.
    Ingest {
        file: PathBuf,
    },
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(task) = cli.task {
        config.task = task;
    }
    config.task_id()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| PipelineError::Usage(format!("--jobs: {e}")))?;
    }
    let mut config = effective_config(&cli)?;
    match cli.command {
        Command::Simulate => {
            let summary = cmd_simulate(&config)?;
            println!(
                "wrote {} transcript file(s) under {:?}",
                summary.files.len(),
                config.transcripts_dir()
            );
            Ok(())
        }
        Command::Train => {
            let total = config.agent_config()?.episodes_total;
            let mut progress = move |e: banditlab::metarl::TrainLogEntry| {
                if e.episode % 50 == 0 || e.episode + 1 == total {
                    println!(
                        "episode {:5}/{total}  mean reward {:8.3}  loss {:8.4}  entropy coef {:.3}",
                        e.episode, e.mean_reward, e.loss, e.entropy_coef
                    );
                }
            };
            let path = cmd_train(&config, Some(&mut progress))?;
            println!("checkpoint written to {path:?}");
            Ok(())
        }
        Command::Evaluate => {
            config.agent = AgentKind::Metarl;
            let summary = cmd_simulate(&config)?;
            println!(
                "wrote {} evaluation transcript(s) under {:?}",
                summary.files.len(),
                config.transcripts_dir()
            );
            Ok(())
        }
        Command::Fit { files } => {
            let manifest = cmd_fit(&config, &files)?;
            println!(
                "wrote {} artifact(s) under {:?}",
                manifest.artifacts.len(),
                config.out_dir.join("reports").join(config.experiment_name())
            );
            Ok(())
        }
        Command::Compare { files } => {
            let (comparison, _) = cmd_compare(&config, &files)?;
            for (model, s) in comparison.models.iter().zip(&comparison.mean_pp) {
                println!("PP({model}) = {:.4} ± {:.4} (n = {})", s.mean, s.ci_half, s.n);
            }
            let failed = comparison.n_failed();
            if failed > 0 {
                return Err(PipelineError::Partial {
                    failed,
                    total: comparison.rows.len(),
                    first_error: comparison
                        .rows
                        .iter()
                        .find_map(|r| r.as_ref().err().cloned())
                        .unwrap_or_default(),
                });
            }
            Ok(())
        }
        Command::Report { files } => {
            let manifest = cmd_report(&config, &files)?;
            for a in &manifest.artifacts {
                println!("{:10} {}", a.kind, a.path);
            }
            println!("manifest config hash {}", manifest.config_hash);
            Ok(())
        }
        Command::GenPrompts => {
            for f in cmd_gen_prompts(&config)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Ingest { file } => {
            let files = cmd_ingest(&config, &file)?;
            println!(
                "ingested {} transcript(s) into {:?}",
                files.len(),
                config.transcripts_dir()
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{e}");
            exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        exit(e.exit_code());
    }
}
