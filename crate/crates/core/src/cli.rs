//! Command-line front end.
//!
//! Exit codes: 0 success, 2 validation or usage error, 3 I/O error,
//! 4 numerical failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{load_dataset, write_embeddings, SyntheticConfig};
use crate::error::{Error, Result};
use crate::experiment::{run_evaluation, run_simulation, ExperimentConfig};
use crate::features::{FeatureMapKind, DEFAULT_DIM_CAP};
use crate::policy::PolicyKind;
use crate::text::{featurize_tfidf_pca, TfidfConfig};

#[derive(Debug, Parser)]
#[command(name = "dialog-bandit", version, about = "Thompson sampling bandits for response selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed dataset texts with TF-IDF and PCA into an EMB1 file.
    Featurize(FeaturizeArgs),
    /// Generate a synthetic bilinear environment.
    MakeSynthetic(SyntheticArgs),
    /// Replay the online split and write regret curves and posteriors.
    Simulate(ExperimentArgs),
    /// Score persisted posteriors on the held-out split with Recall@k.
    Evaluate(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeaturizeMethod {
    TfidfPca,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "tfidf-pca")]
    pub method: FeaturizeMethod,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub min_df: usize,
    #[arg(long)]
    pub max_features: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long = "dim", default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub contexts: usize,
    #[arg(long, default_value_t = 10)]
    pub candidates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DIM_CAP)]
    pub dim_cap: usize,
}

#[derive(Debug, Default, Args)]
pub struct ExperimentArgs {
    /// Plain `key=value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long = "policy", value_parser = parse_policy)]
    pub policies: Vec<PolicyKind>,
    #[arg(long = "map", value_parser = parse_map)]
    pub maps: Vec<FeatureMapKind>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Online and evaluation context counts, e.g. `800:200`.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<(usize, usize)>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub dim_cap: Option<usize>,
    #[arg(long)]
    pub newton_max_iter: Option<usize>,
    #[arg(long)]
    pub log_stride: Option<usize>,
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_map(s: &str) -> std::result::Result<FeatureMapKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("split {s:?} must look like 800:200"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("split {s:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn read_config_file(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map: HashMap<String, Vec<String>> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key=value in {}", path.display()),
        })?;
        let key = key.trim().replace('_', "-");
        let values = map.entry(key).or_default();
        values.extend(value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()));
    }
    Ok(map)
}

impl ExperimentArgs {
    /// Merges flags, the optional config file and defaults.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => read_config_file(p)?,
            None => HashMap::new(),
        };
        const KNOWN: [&str; 13] = [
            "dataset", "embeddings", "policy", "map", "k", "rounds", "lambda", "seed", "split",
            "out-dir", "dim-cap", "newton-max-iter", "log-stride",
        ];
        if let Some(bad) = file.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::Validation(format!("unknown config key {bad:?}")));
        }
        let one = |key: &str| -> Option<&str> { file.get(key).and_then(|v| v.last()).map(String::as_str) };
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Validation(format!("config value {v:?} is not valid for {key}")))
        }
        let defaults = ExperimentConfig::default();

        let dataset = self
            .dataset
            .clone()
            .or_else(|| one("dataset").map(PathBuf::from))
            .ok_or_else(|| Error::Validation("--dataset is required".into()))?;
        let embeddings = self
            .embeddings
            .clone()
            .or_else(|| one("embeddings").map(PathBuf::from))
            .ok_or_else(|| Error::Validation("--embeddings is required".into()))?;
        let policies = if !self.policies.is_empty() {
            self.policies.clone()
        } else if let Some(vs) = file.get("policy") {
            vs.iter().map(|v| v.parse()).collect::<Result<_>>()?
        } else {
            defaults.policies.clone()
        };
        let maps = if !self.maps.is_empty() {
            self.maps.clone()
        } else if let Some(vs) = file.get("map") {
            vs.iter().map(|v| v.parse()).collect::<Result<_>>()?
        } else {
            defaults.maps.clone()
        };
        let seeds = if !self.seeds.is_empty() {
            self.seeds.clone()
        } else if let Some(vs) = file.get("seed") {
            vs.iter().map(|v| parse("seed", v)).collect::<Result<_>>()?
        } else {
            defaults.seeds.clone()
        };
        macro_rules! scalar {
            ($field:expr, $key:literal, $default:expr) => {
                match ($field, one($key)) {
                    (Some(v), _) => v,
                    (None, Some(v)) => parse($key, v)?,
                    (None, None) => $default,
                }
            };
        }
        let split = match (self.split, one("split")) {
            (Some(s), _) => s,
            (None, Some(v)) => parse_split(v).map_err(Error::Validation)?,
            (None, None) => defaults.split,
        };
        let config = ExperimentConfig {
            dataset,
            embeddings,
            policies,
            maps,
            k: scalar!(self.k, "k", defaults.k),
            rounds: scalar!(self.rounds, "rounds", defaults.rounds),
            lambda: scalar!(self.lambda, "lambda", defaults.lambda),
            seeds,
            split,
            out_dir: self
                .out_dir
                .clone()
                .or_else(|| one("out-dir").map(PathBuf::from))
                .unwrap_or(defaults.out_dir),
            dim_cap: scalar!(self.dim_cap, "dim-cap", defaults.dim_cap),
            newton_max_iter: scalar!(self.newton_max_iter, "newton-max-iter", defaults.newton_max_iter),
            log_stride: scalar!(self.log_stride, "log-stride", defaults.log_stride),
            recall_ks: defaults.recall_ks,
            progress: true,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn featurize(args: &FeaturizeArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let store = match args.method {
        FeaturizeMethod::TfidfPca => featurize_tfidf_pca(
            &dataset,
            args.dim,
            TfidfConfig {
                min_df: args.min_df,
                max_features: args.max_features,
            },
        )?,
    };
    write_embeddings(&store, &args.out)?;
    eprintln!("wrote {} embeddings of dim {} to {}", store.len(), store.dim(), args.out.display());
    Ok(())
}

pub fn make_synthetic(args: &SyntheticArgs) -> Result<()> {
    let (dataset, store, truth) = SyntheticConfig::new(args.dim, args.contexts, args.candidates, args.seed)
        .with_dim_cap(args.dim_cap)
        .generate()?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset.write_tsv(&dir.join("dataset.tsv"))?;
    write_embeddings(&store, &dir.join("embeddings.emb"))?;
    truth.write_csv(&dir.join("truth.csv"))?;
    eprintln!(
        "wrote {} contexts x {} candidates (dim {}) to {}",
        args.contexts,
        args.candidates,
        args.dim,
        dir.display()
    );
    Ok(())
}

pub fn simulate(args: &ExperimentArgs) -> Result<()> {
    let config = args.resolve()?;
    let cells = run_simulation(&config)?;
    for cell in &cells {
        eprintln!(
            "{}/{}/seed {}: final average cumulative regret {:.4}",
            cell.policy,
            cell.map,
            cell.seed,
            cell.final_regret()
        );
    }
    Ok(())
}

pub fn evaluate(args: &ExperimentArgs) -> Result<()> {
    let config = args.resolve()?;
    for row in run_evaluation(&config)? {
        eprintln!("{}/{} R@{} = {:.4} ({} contexts)", row.policy, row.map, row.k, row.recall, row.n_eval);
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Featurize(a) => featurize(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
