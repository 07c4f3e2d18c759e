//! TOML experiment configuration with CLI overrides.
//!
//! Every knob has a default, so an empty file runs a synthetic-data
//! experiment; `local_iterations` and the `[budget]` triple are mutually
//! exclusive ways to fix the per-round iteration count.

use protofed::budget;
use protofed::data::PartitionSpec;
use protofed::prototype::AggregationRule;
use protofed::protocol::{RoundConfig, SimulationConfig, WinnerMode};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "PROTOFED_DATA_DIR";

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid {}: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub clients: Option<usize>,
    pub avg_classes: Option<f64>,
    pub std_classes: Option<f64>,
    pub train_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub rounds: Option<u64>,
    pub local_iterations: Option<u32>,
    pub eta: Option<f64>,
    pub lambda: Option<f64>,
    pub batch_size: Option<usize>,
    pub feature_dim: Option<usize>,
    pub hidden_dims: Option<Vec<usize>>,
    pub difficulty_bits: Option<u32>,
    pub mode: Option<String>,
    pub aggregation: Option<String>,
    pub max_mine_trials: Option<u64>,
    pub synth: Option<SynthConfig>,
    pub budget: Option<BudgetTriple>,
    pub constants: Option<ConstantsConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub dim: Option<usize>,
    pub spread: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BudgetTriple {
    pub t_sum: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    pub l1: f64,
    pub l2: f64,
    pub sigma2: f64,
    pub g: f64,
    pub q: f64,
    pub chi: f64,
    pub delta: f64,
}

impl ConstantsConfig {
    pub fn to_constants(self) -> budget::ConvergenceConstants {
        budget::ConvergenceConstants {
            l1: self.l1,
            l2: self.l2,
            sigma2: self.sigma2,
            g: self.g,
            q: self.q,
            chi: self.chi,
            delta: self.delta,
        }
    }
}

/// Scalar overrides mirroring the config fields (`--key value`).
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub avg_classes: Option<f64>,
    #[arg(long)]
    pub std_classes: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<u64>,
    #[arg(long)]
    pub local_iterations: Option<u32>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub difficulty_bits: Option<u32>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub t_sum: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Synth,
    Mnist,
    Fmnist,
}

/// How the per-round iteration count was fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterationPlan {
    Explicit(u32),
    Budget { t_sum: f64, alpha: f64, beta: f64, resolved: u32 },
}

impl IterationPlan {
    pub fn iterations(&self) -> u32 {
        match *self {
            IterationPlan::Explicit(e) => e,
            IterationPlan::Budget { resolved, .. } => resolved,
        }
    }
}

/// Fully validated configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub partition: PartitionSpec,
    pub rounds: u64,
    pub seed: u64,
    pub plan: IterationPlan,
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub difficulty_bits: u32,
    pub mode: WinnerMode,
    pub aggregation: AggregationRule,
    pub max_mine_trials: u64,
    pub synth_classes: usize,
    pub synth_per_class: usize,
    pub synth_dim: usize,
    pub synth_spread: f64,
    pub constants: Option<ConstantsConfig>,
}

impl ExperimentConfig {
    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig {
            rounds: self.rounds,
            seed: self.seed,
            round: RoundConfig {
                local_iterations: self.plan.iterations(),
                eta: self.eta,
                lambda: self.lambda,
                batch_size: self.batch_size,
                difficulty_bits: self.difficulty_bits,
                mode: self.mode,
                aggregation: self.aggregation,
                max_mine_trials: self.max_mine_trials,
            },
            hidden_dims: self.hidden_dims.clone(),
            feature_dim: self.feature_dim,
            corrupt_rounds: vec![],
        }
    }
}

pub fn parse_file(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad("config", format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| bad("config", e.to_string()))
}

fn apply_overrides(mut raw: RawConfig, over: &Overrides) -> RawConfig {
    macro_rules! merge {
        ($($field:ident),*) => {
            $(if over.$field.is_some() { raw.$field = over.$field.clone(); })*
        };
    }
    merge!(
        dataset, data_dir, output_dir, clients, avg_classes, std_classes, train_fraction, seed, rounds,
        local_iterations, eta, lambda, batch_size, feature_dim, difficulty_bits, mode
    );
    if over.t_sum.is_some() || over.alpha.is_some() || over.beta.is_some() {
        let mut triple = raw.budget.unwrap_or_default();
        if over.t_sum.is_some() {
            triple.t_sum = over.t_sum;
        }
        if over.alpha.is_some() {
            triple.alpha = over.alpha;
        }
        if over.beta.is_some() {
            triple.beta = over.beta;
        }
        raw.budget = Some(triple);
    }
    raw
}

/// Validates the merged configuration, resolving the iteration count from
/// the budget triple when one is given. Defaults: synthetic data, 5
/// clients, avg 3 / std 1 class space, eta 0.1, batch 32, lambda 1.
pub fn resolve(raw: RawConfig, over: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let raw = apply_overrides(raw, over);

    let dataset = match raw.dataset.as_deref().unwrap_or("synth") {
        "synth" => Dataset::Synth,
        "mnist" => Dataset::Mnist,
        "fmnist" => Dataset::Fmnist,
        other => return Err(bad("dataset", format!("expected synth|mnist|fmnist, got {other:?}"))),
    };
    let data_dir = raw.data_dir.clone().or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));

    let clients = raw.clients.unwrap_or(5);
    if clients == 0 {
        return Err(bad("clients", "must be at least 1"));
    }
    let avg = raw.avg_classes.unwrap_or(3.0);
    let std = raw.std_classes.unwrap_or(1.0);
    if !(std >= 0.0 && std.is_finite()) {
        return Err(bad("std_classes", format!("must be nonnegative, got {std}")));
    }
    let train_fraction = raw.train_fraction.unwrap_or(0.8);
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(bad("train_fraction", format!("must lie strictly between 0 and 1, got {train_fraction}")));
    }
    let seed = raw.seed.unwrap_or(42);
    let rounds = raw.rounds.unwrap_or(5);

    let eta = raw.eta.unwrap_or(0.1);
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(bad("eta", format!("must be positive, got {eta}")));
    }
    let lambda = raw.lambda.unwrap_or(1.0);
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(bad("lambda", format!("must be nonnegative, got {lambda}")));
    }
    let batch_size = raw.batch_size.unwrap_or(32);
    if batch_size == 0 {
        return Err(bad("batch_size", "must be at least 1"));
    }
    let feature_dim = raw.feature_dim.unwrap_or(64);
    if feature_dim == 0 {
        return Err(bad("feature_dim", "must be at least 1"));
    }
    let hidden_dims = raw.hidden_dims.clone().unwrap_or_else(|| vec![128]);
    if hidden_dims.contains(&0) {
        return Err(bad("hidden_dims", "layer widths must be positive"));
    }
    let difficulty_bits = raw.difficulty_bits.unwrap_or(8);
    if difficulty_bits > 255 {
        return Err(bad("difficulty_bits", format!("must be at most 255, got {difficulty_bits}")));
    }
    let mode = match raw.mode.as_deref().unwrap_or("sim") {
        "sim" => WinnerMode::Sim,
        "real" => WinnerMode::Real,
        other => return Err(bad("mode", format!("expected sim|real, got {other:?}"))),
    };
    let aggregation = match raw.aggregation.as_deref().unwrap_or("contributor") {
        "contributor" => AggregationRule::ContributorCount,
        "total" => AggregationRule::TotalClients,
        other => return Err(bad("aggregation", format!("expected contributor|total, got {other:?}"))),
    };
    let max_mine_trials = raw.max_mine_trials.unwrap_or(1 << 40);
    if max_mine_trials == 0 {
        return Err(bad("max_mine_trials", "must be at least 1"));
    }

    // Exactly one way to fix E: an explicit count, or the budget triple;
    // with neither, the default explicit count applies.
    let plan = match (raw.local_iterations, &raw.budget) {
        (Some(_), Some(_)) => {
            return Err(bad("local_iterations", "give either local_iterations or [budget], not both"));
        }
        (Some(e), None) => {
            if e == 0 {
                return Err(bad("local_iterations", "must be at least 1"));
            }
            IterationPlan::Explicit(e)
        }
        (None, Some(triple)) => {
            let t_sum = triple.t_sum.ok_or_else(|| bad("budget.t_sum", "missing"))?;
            let alpha = triple.alpha.ok_or_else(|| bad("budget.alpha", "missing"))?;
            let beta = triple.beta.ok_or_else(|| bad("budget.beta", "missing"))?;
            if rounds == 0 {
                return Err(bad("rounds", "budget resolution needs at least one round"));
            }
            let resolved = budget::local_iterations(t_sum, rounds, alpha, beta)
                .map_err(|e| bad("budget", e.to_string()))?;
            let resolved = u32::try_from(resolved).map_err(|_| bad("budget", "iteration count overflows"))?;
            IterationPlan::Budget { t_sum, alpha, beta, resolved }
        }
        (None, None) => IterationPlan::Explicit(10),
    };

    let synth = raw.synth.clone();
    let synth_classes = synth.as_ref().and_then(|s| s.classes).unwrap_or(10);
    let synth_per_class = synth.as_ref().and_then(|s| s.per_class).unwrap_or(100);
    let synth_dim = synth.as_ref().and_then(|s| s.dim).unwrap_or(32);
    let synth_spread = synth.as_ref().and_then(|s| s.spread).unwrap_or(0.15);
    if synth_classes == 0 || synth_per_class == 0 || synth_dim == 0 {
        return Err(bad("synth", "classes, per_class, and dim must be positive"));
    }
    if !(synth_spread >= 0.0 && synth_spread.is_finite()) {
        return Err(bad("synth.spread", format!("must be nonnegative, got {synth_spread}")));
    }
    if !(avg >= 1.0 && avg.is_finite()) {
        return Err(bad("avg_classes", format!("must be at least 1, got {avg}")));
    }

    Ok(ExperimentConfig {
        dataset,
        data_dir,
        output_dir: raw.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        partition: PartitionSpec { clients, avg, std, seed, train_fraction },
        rounds,
        seed,
        plan,
        eta,
        lambda,
        batch_size,
        feature_dim,
        hidden_dims,
        difficulty_bits,
        mode,
        aggregation,
        max_mine_trials,
        synth_classes,
        synth_per_class,
        synth_dim,
        synth_spread,
        constants: raw.constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = resolve(RawConfig::default(), &Overrides::default()).unwrap();
        assert_eq!(cfg.dataset, Dataset::Synth);
        assert_eq!(cfg.partition.clients, 5);
        assert_eq!(cfg.eta, 0.1);
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.plan, IterationPlan::Explicit(10));
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let raw: RawConfig = toml::from_str("lambda = -1.0").unwrap();
        let err = resolve(raw, &Overrides::default()).unwrap_err();
        assert_eq!(err.field, "lambda");
    }

    #[test]
    fn budget_triple_resolves_iterations() {
        let raw: RawConfig = toml::from_str(
            "rounds = 6\n[budget]\nt_sum = 100.0\nalpha = 1.0\nbeta = 4.0\n",
        )
        .unwrap();
        let cfg = resolve(raw, &Overrides::default()).unwrap();
        assert_eq!(cfg.plan.iterations(), 12);
    }

    #[test]
    fn explicit_iterations_and_budget_conflict() {
        let raw: RawConfig = toml::from_str(
            "local_iterations = 5\n[budget]\nt_sum = 100.0\nalpha = 1.0\nbeta = 4.0\n",
        )
        .unwrap();
        let err = resolve(raw, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("local_iterations"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(toml::from_str::<RawConfig>("no_such_key = 1").is_err());
    }

    #[test]
    fn overrides_replace_file_values() {
        let raw: RawConfig = toml::from_str("eta = 0.5\nrounds = 9").unwrap();
        let over = Overrides { eta: Some(0.2), ..Overrides::default() };
        let cfg = resolve(raw, &over).unwrap();
        assert_eq!(cfg.eta, 0.2);
        assert_eq!(cfg.rounds, 9);
    }
}
