//! Experiment driver: loads a TOML config (plus `--key value` overrides),
//! acquires the dataset, runs the round protocol, and writes metric/plot
//! artifacts. Exit codes: 0 success, 2 configuration error, 3 round or
//! validation failure, 4 I/O error.

mod config;

use clap::{Parser, Subcommand};
use config::{parse_file, resolve, ConfigError, Dataset, ExperimentConfig, IterationPlan, Overrides, RawConfig};
use protofed::data::{distribution_heatmap, load_idx, partition_non_iid, synth_blobs, LabeledSet};
use protofed::ledger::validate_chain;
use protofed::protocol::run_experiment;
use protofed::report;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "protofed", version, about = "Decentralized federated prototype learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics.csv, chain.jsonl, heatmap.csv,
    /// summary.json (and bounds.csv when constants are configured).
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Partition the dataset and write only the class-distribution heatmap.
    Partition {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep round counts for the configured budget and write bounds.csv.
    Bounds {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Largest round count in the sweep.
        #[arg(long, default_value_t = 25)]
        max_rounds: u64,
    },
    /// Check a chain export for integrity violations.
    ValidateChain {
        #[arg(long)]
        path: PathBuf,
    },
}

enum CliError {
    Config(String),
    Round(String),
    Io(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Round(_) => "round",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Round(m) | CliError::Io(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Round(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => command_run(config.as_deref(), &overrides),
        Command::Partition { config, overrides } => command_partition(config.as_deref(), &overrides),
        Command::Bounds { config, overrides, max_rounds } => {
            command_bounds(config.as_deref(), &overrides, max_rounds)
        }
        Command::ValidateChain { path } => command_validate_chain(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": err.message(), "kind": err.kind() })
            );
            ExitCode::from(err.exit_code())
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let raw = match path {
        Some(p) => parse_file(p)?,
        None => RawConfig::default(),
    };
    Ok(resolve(raw, overrides)?)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledSet, CliError> {
    match cfg.dataset {
        Dataset::Synth => {
            synth_blobs(cfg.synth_classes, cfg.synth_per_class, cfg.synth_dim, cfg.synth_spread, cfg.seed)
                .map_err(|e| CliError::Config(format!("invalid synth: {e}")))
        }
        Dataset::Mnist | Dataset::Fmnist => {
            let dir = cfg.data_dir.clone().ok_or_else(|| {
                CliError::Config(format!(
                    "dataset not found: set data_dir or {} for {:?}",
                    config::DATA_DIR_ENV,
                    cfg.dataset
                ))
            })?;
            let images = dir.join("train-images-idx3-ubyte");
            let labels = dir.join("train-labels-idx1-ubyte");
            if !images.exists() || !labels.exists() {
                return Err(CliError::Config(format!("dataset not found: {}", images.display())));
            }
            load_idx(&images, &labels).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", cfg.output_dir.display())))
}

fn bounds_contents(cfg: &ExperimentConfig, max_rounds: u64) -> Option<String> {
    let IterationPlan::Budget { t_sum, alpha, beta, .. } = cfg.plan else {
        return None;
    };
    let constants = cfg.constants.map(|c| c.to_constants());
    let with_constants = constants.as_ref().map(|cc| (cc, cfg.eta, cfg.lambda));
    Some(report::bounds_csv(t_sum, alpha, beta, max_rounds, with_constants))
}

fn command_run(path: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let cfg = load_config(path, overrides)?;
    let data = load_dataset(&cfg)?;
    let partitions = partition_non_iid(&data, &cfg.partition)
        .map_err(|e| CliError::Config(format!("partitioning failed: {e}")))?;
    let heatmap = distribution_heatmap(&partitions);

    let sim = cfg.simulation_config();
    let output = run_experiment(partitions, &sim).map_err(|e| CliError::Round(e.to_string()))?;

    ensure_output_dir(&cfg)?;
    write_file(&cfg.output_dir.join("metrics.csv"), &report::metrics_csv(&output.metrics))?;
    write_file(&cfg.output_dir.join("metrics.json"), &report::metrics_json(&output.metrics))?;
    write_file(&cfg.output_dir.join("chain.jsonl"), &report::chain_jsonl(&output.chain))?;
    write_file(&cfg.output_dir.join("heatmap.csv"), &report::heatmap_csv(&heatmap))?;
    if let Some(bounds) = bounds_contents(&cfg, cfg.rounds.max(12)) {
        write_file(&cfg.output_dir.join("bounds.csv"), &bounds)?;
    }

    let accepted = output.metrics.iter().filter(|m| m.accepted).count() as u64;
    let last = output.metrics.last();
    let summary = report::Summary {
        rounds_total: cfg.rounds,
        rounds_accepted: accepted,
        final_taa: last.map_or(0.0, |m| m.taa),
        final_tal: last.map_or(0.0, |m| m.tal),
        params_transmitted_mean: last.map_or(0.0, |m| m.params_transmitted),
        chain_blocks: output.chain.len() as u64,
        empirical_q_mean: if output.metrics.is_empty() {
            0.0
        } else {
            output.metrics.iter().map(|m| m.q_proxy_mean).sum::<f64>() / output.metrics.len() as f64
        },
        empirical_g_max: output.empirical_g_max,
    };
    write_file(&cfg.output_dir.join("summary.json"), &report::summary_json(&summary))?;
    println!(
        "{} rounds ({} accepted), final TAA {:.4}, artifacts in {}",
        cfg.rounds,
        accepted,
        summary.final_taa,
        cfg.output_dir.display()
    );
    Ok(())
}

fn command_partition(path: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let cfg = load_config(path, overrides)?;
    let data = load_dataset(&cfg)?;
    let partitions = partition_non_iid(&data, &cfg.partition)
        .map_err(|e| CliError::Config(format!("partitioning failed: {e}")))?;
    ensure_output_dir(&cfg)?;
    let heatmap = distribution_heatmap(&partitions);
    write_file(&cfg.output_dir.join("heatmap.csv"), &report::heatmap_csv(&heatmap))?;
    println!("heatmap for {} clients written to {}", cfg.partition.clients, cfg.output_dir.display());
    Ok(())
}

fn command_bounds(path: Option<&Path>, overrides: &Overrides, max_rounds: u64) -> Result<(), CliError> {
    let cfg = load_config(path, overrides)?;
    let Some(bounds) = bounds_contents(&cfg, max_rounds) else {
        return Err(CliError::Config("invalid budget: the bounds sweep needs a [budget] triple".into()));
    };
    ensure_output_dir(&cfg)?;
    write_file(&cfg.output_dir.join("bounds.csv"), &bounds)?;
    println!("bounds sweep over 1..={max_rounds} rounds written to {}", cfg.output_dir.display());
    Ok(())
}

fn command_validate_chain(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let chain = report::parse_chain_jsonl(&text).map_err(|e| CliError::Round(format!("malformed chain: {e}")))?;
    match validate_chain(&chain) {
        Ok(()) => {
            println!("chain valid: {} blocks", chain.len());
            Ok(())
        }
        Err((index, violation)) => {
            Err(CliError::Round(format!("chain invalid at block {index}: {violation:?}")))
        }
    }
}
