//! `fuzz`: run, profile, compare and break down stimulation-encoder fuzzing campaigns.
//!
//! Exit status: 0 on success (violations are findings, not failures), 2 for
//! config or usage errors, 1 for runtime errors. Errors are also written to
//! stderr as one JSON object.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use stimfuzz_core::campaign::{replay_campaign, run_campaign, write_artifacts};
use stimfuzz_core::config::{resolve_rng_seed, CampaignConfig, ConfigError};
use stimfuzz_core::coverage::{profile, ProfileSpace};
use stimfuzz_core::diversity::FeatureExtractor;
use stimfuzz_core::fixtures::write_workspace;
use stimfuzz_core::fuzzer::read_log;
use stimfuzz_core::image::ImageTensor;
use stimfuzz_core::model::load_model_file;
use stimfuzz_core::report::{breakdown, breakdown_csv, compare, CampaignReport};

#[derive(Parser)]
#[command(
    name = "fuzz",
    version,
    about = "Coverage-guided safety fuzzing for stimulation encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Artifact directory [default: fuzz-out/<name>]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides FUZZ_RNG_SEED and the config's rng_seed.
        #[arg(long)]
        rng_seed: Option<u64>,
    },
    /// Compute per-dimension min/max over a profiling dataset.
    Profile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        space: Space,
        /// Needed for `--space features`: builtin:pool8, builtin:pixels or a NEF path.
        #[arg(long, default_value = "builtin:pool8")]
        extractor: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank campaigns by combined violation and diversity z-score.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Per-constraint violation counts for campaigns of one strategy and budget.
    Breakdown {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-execute a campaign log and check it against the config.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        rng_seed: Option<u64>,
    },
    /// Write fixture encoders, seeds, profiling images and an example config.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Outputs,
    Neurons,
    Features,
}

impl From<Space> for ProfileSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Outputs => ProfileSpace::Outputs,
            Space::Neurons => ProfileSpace::Neurons,
            Space::Features => ProfileSpace::Features,
        }
    }
}

enum Failure {
    Schema(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Schema(msg) => Failure::Schema(msg),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn load_config(path: &Path, rng_flag: Option<u64>) -> Result<CampaignConfig, Failure> {
    let mut config = CampaignConfig::load(path)?;
    let env = std::env::var("FUZZ_RNG_SEED").ok();
    let seed = resolve_rng_seed(rng_flag, env.as_deref(), config.rng_seed)?;
    config.set_rng_seed(seed);
    Ok(config)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reports keyed by name, falling back to the file path when names repeat.
fn load_reports(paths: &[PathBuf]) -> anyhow::Result<Vec<(String, CampaignReport)>> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CampaignReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let names: HashSet<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    let unique = names.len() == reports.len();
    Ok(paths
        .iter()
        .zip(reports)
        .map(|(p, r)| {
            (
                if unique {
                    r.name.clone()
                } else {
                    p.display().to_string()
                },
                r,
            )
        })
        .collect())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out, rng_seed } => {
            let config = load_config(&config, rng_seed)?;
            let run = run_campaign(&config).context("campaign failed")?;
            let out = out.unwrap_or_else(|| Path::new("fuzz-out").join(&config.name));
            write_artifacts(&out, &run).context("writing artifacts")?;
            let r = &run.report;
            let summary = serde_json::json!({
                "name": r.name,
                "strategy": r.strategy,
                "tests": r.tests_executed,
                "violations": r.violations,
                "per_constraint": r.per_constraint,
                "coverage": r.coverage.fraction,
                "out": out.display().to_string(),
            });
            println!("{summary}");
        }
        Command::Profile {
            model,
            data,
            space,
            extractor,
            out,
        } => {
            let graph = load_model_file(&model).with_context(|| format!("loading {}", model.display()))?;
            let images = ImageTensor::load_path(&data).context("loading profiling data")?;
            let extractor = if extractor.starts_with("builtin:") {
                FeatureExtractor::builtin(&extractor).map_err(|e| Failure::Schema(e.to_string()))?
            } else {
                let m = load_model_file(Path::new(&extractor)).with_context(|| format!("loading {extractor}"))?;
                FeatureExtractor::Model {
                    id: extractor,
                    model: Box::new(m),
                }
            };
            let stats = profile(&graph, &images, space.into(), Some(&extractor)).context("profiling")?;
            write_file(&out, &stats.to_json())?;
            println!(
                "{}",
                serde_json::json!({ "dims": stats.dims(), "samples": stats.samples, "out": out.display().to_string() })
            );
        }
        Command::Compare { reports, out, json } => {
            let reports = load_reports(&reports)?;
            let table = compare(&reports).map_err(|e| anyhow!(e))?;
            print!("{}", table.to_table());
            if let Some(path) = out {
                write_file(&path, &table.to_csv())?;
            }
            if let Some(path) = json {
                write_file(&path, &serde_json::to_string_pretty(&table).expect("table serializes"))?;
            }
        }
        Command::Breakdown { reports, out, json } => {
            let reports = load_reports(&reports)?;
            let rows = breakdown(&reports).map_err(|e| anyhow!(e))?;
            let csv = breakdown_csv(&rows);
            print!("{csv}");
            if let Some(path) = out {
                write_file(&path, &csv)?;
            }
            if let Some(path) = json {
                write_file(&path, &serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
            }
        }
        Command::Replay { config, log, rng_seed } => {
            let config = load_config(&config, rng_seed)?;
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let entries = read_log(&text).with_context(|| format!("parsing {}", log.display()))?;
            let outcome = replay_campaign(&config, &entries).context("replay failed")?;
            println!(
                "{}",
                serde_json::json!({
                    "tests": outcome.tests_executed,
                    "violations": outcome.violations.len(),
                    "corpus": outcome.corpus.len(),
                    "coverage": outcome.coverage.fraction(),
                })
            );
        }
        Command::Fixture { out } => {
            let files = write_workspace(&out).with_context(|| format!("writing fixtures to {}", out.display()))?;
            println!(
                "{}",
                serde_json::json!({ "files": files.len(), "out": out.display().to_string() })
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Schema(message)) => {
            eprintln!("{}", serde_json::json!({ "error": "schema", "message": message }));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!(
                "{}",
                serde_json::json!({ "error": "runtime", "message": e.to_string(), "causes": causes })
            );
            ExitCode::from(1)
        }
    }
}
