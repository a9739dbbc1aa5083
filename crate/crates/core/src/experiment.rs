//! Policy × feature-map × seed grids over a replay dataset, with CSV output.
//!
//! Output layout under the output directory:
//!
//! * `regret.csv`: `round,policy,feature_map,seed,avg_cum_regret`, one row
//!   every `log_stride` rounds per cell.
//! * `recall.csv`: `policy,feature_map,k,recall,n_eval`, recall averaged over
//!   seeds.
//! * `posteriors/<policy>_<map>_seed<seed>.bin`: the final posterior of each
//!   cell, so that evaluation scores exactly the trained agent.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{load_dataset, load_embeddings, EmbeddingStore, ReplayDataset};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureMapKind, DEFAULT_DIM_CAP};
use crate::logreg::{NewtonOptions, PosteriorState};
use crate::policy::{AgentConfig, BanditAgent, PolicyKind};
use crate::replay::{recall_at_k, run_replay_with, RegretCurve, RewardSource};

pub const REGRET_HEADER: &str = "round,policy,feature_map,seed,avg_cum_regret";
pub const RECALL_HEADER: &str = "policy,feature_map,k,recall,n_eval";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub embeddings: PathBuf,
    pub policies: Vec<PolicyKind>,
    pub maps: Vec<FeatureMapKind>,
    pub k: usize,
    pub rounds: usize,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    /// Contexts used online and held out for Recall@k, taken in file order.
    pub split: (usize, usize),
    pub out_dir: PathBuf,
    pub dim_cap: usize,
    pub newton_max_iter: usize,
    pub log_stride: usize,
    pub recall_ks: Vec<usize>,
    /// Print a progress line to stderr every 1000 rounds.
    pub progress: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            embeddings: PathBuf::new(),
            policies: vec![PolicyKind::ThompsonSampling],
            maps: vec![FeatureMapKind::Linear, FeatureMapKind::Bilinear],
            k: 1,
            rounds: 50_000,
            lambda: 1.0,
            seeds: vec![0],
            split: (800, 200),
            out_dir: PathBuf::from("out"),
            dim_cap: DEFAULT_DIM_CAP,
            newton_max_iter: NewtonOptions::default().max_iter,
            log_stride: 10,
            recall_ks: vec![1, 2, 5],
            progress: false,
        }
    }
}

impl ExperimentConfig {
    /// Checks the settings that do not depend on the input files.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.policies.is_empty() || self.maps.is_empty() {
            return fail("at least one policy and one feature map are required".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.log_stride == 0 {
            return fail("log stride must be at least 1".into());
        }
        if self.split.0 == 0 {
            return fail("the online split must contain at least one context".into());
        }
        if self.recall_ks.iter().any(|&k| k == 0) {
            return fail("recall k values must be positive".into());
        }
        Ok(())
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            max_iter: self.newton_max_iter,
            ..NewtonOptions::default()
        }
    }

    /// `(policy, map, seed)` cells in output order.
    pub fn cells(&self) -> Vec<(PolicyKind, FeatureMapKind, u64)> {
        let mut cells = Vec::new();
        for &p in &self.policies {
            for &m in &self.maps {
                for &s in &self.seeds {
                    cells.push((p, m, s));
                }
            }
        }
        cells
    }

    pub fn agent(
        &self,
        policy: PolicyKind,
        map: FeatureMapKind,
        embedding_dim: usize,
        seed: u64,
    ) -> Result<BanditAgent> {
        AgentConfig::new(policy, map, embedding_dim)
            .lambda(self.lambda)
            .dim_cap(self.dim_cap)
            .newton(self.newton())
            .seed(agent_seed(seed))
            .build()
    }
}

/// The agent's own random stream, kept apart from the replay's context draws.
fn agent_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03
}

/// Loaded and validated inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub online: ReplayDataset,
    pub eval: ReplayDataset,
    pub embeddings: EmbeddingStore,
}

/// Checks the config against in-memory inputs and splits the dataset.
pub fn prepare_inputs(
    config: &ExperimentConfig,
    dataset: &ReplayDataset,
    embeddings: EmbeddingStore,
) -> Result<Inputs> {
    config.validate()?;
    dataset.validate()?;
    dataset.check_embeddings(&embeddings)?;
    let (online, eval) = dataset.split(config.split.0, config.split.1)?;
    if config.k >= online.min_pool_size() {
        return Err(Error::Validation(format!(
            "k = {} must be smaller than the smallest candidate pool ({})",
            config.k,
            online.min_pool_size()
        )));
    }
    for &map in &config.maps {
        FeatureMap::new(map, embeddings.dim(), config.dim_cap)?;
    }
    Ok(Inputs {
        online,
        eval,
        embeddings,
    })
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let embeddings = load_embeddings(&config.embeddings)?;
    prepare_inputs(config, &dataset, embeddings)
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub policy: PolicyKind,
    pub map: FeatureMapKind,
    pub seed: u64,
    pub curve: RegretCurve,
    pub agent: BanditAgent,
}

impl CellResult {
    pub fn final_regret(&self) -> f64 {
        self.curve.last().unwrap_or(0.0)
    }
}

/// Runs every cell of the grid on the online split. Cells are independent
/// and run in parallel; results come back in [`ExperimentConfig::cells`] order.
pub fn run_grid(config: &ExperimentConfig, inputs: &Inputs) -> Result<Vec<CellResult>> {
    let rounds = config.rounds;
    config
        .cells()
        .into_par_iter()
        .map(|(policy, map, seed)| {
            let mut agent = config.agent(policy, map, inputs.embeddings.dim(), seed)?;
            let outcome = run_replay_with(
                &inputs.online,
                &inputs.embeddings,
                &mut agent,
                rounds,
                config.k,
                seed,
                RewardSource::Labels,
                |t| {
                    if config.progress && t % 1000 == 0 {
                        eprintln!("[{policy}/{map}/seed {seed}] round {t}/{rounds}");
                    }
                },
            )?;
            Ok(CellResult {
                policy,
                map,
                seed,
                curve: outcome.curve,
                agent,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub policy: PolicyKind,
    pub map: FeatureMapKind,
    pub k: usize,
    /// Mean over seeds.
    pub recall: f64,
    pub n_eval: usize,
}

/// Recall@k of each cell's posterior mean on the held-out split, averaged over seeds.
pub fn recall_table(
    config: &ExperimentConfig,
    agents: &[(PolicyKind, FeatureMapKind, &BanditAgent)],
    eval: &ReplayDataset,
    embeddings: &EmbeddingStore,
) -> Result<Vec<RecallRow>> {
    if eval.is_empty() {
        return Ok(Vec::new());
    }
    let ks: Vec<usize> = config
        .recall_ks
        .iter()
        .copied()
        .filter(|&k| k <= eval.min_pool_size())
        .collect();
    let mut rows = Vec::new();
    for &policy in &config.policies {
        for &map in &config.maps {
            let group: Vec<&BanditAgent> = agents
                .iter()
                .filter(|(p, m, _)| *p == policy && *m == map)
                .map(|(_, _, a)| *a)
                .collect();
            if group.is_empty() {
                continue;
            }
            for &k in &ks {
                let mut total = 0.0;
                for agent in &group {
                    total += recall_at_k(agent, eval, embeddings, k)?;
                }
                rows.push(RecallRow {
                    policy,
                    map,
                    k,
                    recall: total / group.len() as f64,
                    n_eval: eval.len(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn regret_csv(config: &ExperimentConfig, cells: &[CellResult]) -> String {
    let mut out = String::from(REGRET_HEADER);
    out.push('\n');
    for cell in cells {
        for t in (config.log_stride..=cell.curve.len()).step_by(config.log_stride) {
            let value = cell.curve.at(t).expect("t within curve");
            let _ = writeln!(out, "{t},{},{},{},{value:.6}", cell.policy, cell.map, cell.seed);
        }
    }
    out
}

pub fn recall_csv(rows: &[RecallRow]) -> String {
    let mut out = String::from(RECALL_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6},{}", r.policy, r.map, r.k, r.recall, r.n_eval);
    }
    out
}

pub fn posterior_path(out_dir: &Path, policy: PolicyKind, map: FeatureMapKind, seed: u64) -> PathBuf {
    out_dir
        .join("posteriors")
        .join(format!("{policy}_{map}_seed{seed}.bin"))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub recall: Vec<RecallRow>,
}

impl ExperimentResult {
    /// Mean final regret over seeds for one (policy, map) pair.
    pub fn mean_final_regret(&self, policy: PolicyKind, map: FeatureMapKind) -> Option<f64> {
        let finals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.policy == policy && c.map == map)
            .map(CellResult::final_regret)
            .collect();
        (!finals.is_empty()).then(|| finals.iter().sum::<f64>() / finals.len() as f64)
    }
}

/// Runs the grid on the online split, writes regret curves and posteriors.
pub fn run_simulation(config: &ExperimentConfig) -> Result<Vec<CellResult>> {
    let inputs = load_inputs(config)?;
    let cells = run_grid(config, &inputs)?;
    write_file(&config.out_dir.join("regret.csv"), regret_csv(config, &cells))?;
    for cell in &cells {
        write_file(
            &posterior_path(&config.out_dir, cell.policy, cell.map, cell.seed),
            cell.agent.posterior().to_bytes(),
        )?;
    }
    Ok(cells)
}

/// Scores the posteriors persisted by [`run_simulation`] on the held-out split.
pub fn run_evaluation(config: &ExperimentConfig) -> Result<Vec<RecallRow>> {
    let inputs = load_inputs(config)?;
    if inputs.eval.is_empty() {
        return Err(Error::Validation("the evaluation split is empty".into()));
    }
    let mut agents = Vec::new();
    for (policy, map, seed) in config.cells() {
        let path = posterior_path(&config.out_dir, policy, map, seed);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut agent = config.agent(policy, map, inputs.embeddings.dim(), seed)?;
        agent.set_posterior(PosteriorState::from_bytes(&bytes)?)?;
        agents.push((policy, map, agent));
    }
    let refs: Vec<_> = agents.iter().map(|(p, m, a)| (*p, *m, a)).collect();
    let rows = recall_table(config, &refs, &inputs.eval, &inputs.embeddings)?;
    write_file(&config.out_dir.join("recall.csv"), recall_csv(&rows))?;
    Ok(rows)
}

/// Simulation and evaluation in one pass.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let inputs = load_inputs(config)?;
    run_experiment_on(config, &inputs)
}

/// [`run_experiment`] on already loaded inputs.
pub fn run_experiment_on(config: &ExperimentConfig, inputs: &Inputs) -> Result<ExperimentResult> {
    let cells = run_grid(config, inputs)?;
    let refs: Vec<_> = cells.iter().map(|c| (c.policy, c.map, &c.agent)).collect();
    let recall = recall_table(config, &refs, &inputs.eval, &inputs.embeddings)?;
    write_file(&config.out_dir.join("regret.csv"), regret_csv(config, &cells))?;
    write_file(&config.out_dir.join("recall.csv"), recall_csv(&recall))?;
    for cell in &cells {
        write_file(
            &posterior_path(&config.out_dir, cell.policy, cell.map, cell.seed),
            cell.agent.posterior().to_bytes(),
        )?;
    }
    Ok(ExperimentResult { cells, recall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::make_synthetic;

    fn config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            policies: vec![PolicyKind::ThompsonSampling, PolicyKind::Random],
            maps: vec![FeatureMapKind::Linear, FeatureMapKind::Bilinear],
            rounds: 60,
            seeds: vec![1, 2],
            split: (40, 20),
            out_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (ds, _, _) = make_synthetic(2, 1000, 10, 1).unwrap();
        let (online, eval) = ds.split(800, 200).unwrap();
        assert_eq!(online.len(), 800);
        assert_eq!(eval.len(), 200);
        let mut ids: Vec<&str> = online
            .contexts
            .iter()
            .chain(&eval.contexts)
            .map(|c| c.context_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 1000);
        assert!(ds.split(900, 200).is_err());
    }

    #[test]
    fn grid_shapes_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            policies: vec![PolicyKind::ThompsonSampling],
            ..config(dir.path())
        };
        let (ds, store, _) = make_synthetic(3, 60, 10, 2).unwrap();
        let inputs = prepare_inputs(&cfg, &ds, store).unwrap();
        let result = run_experiment_on(&cfg, &inputs).unwrap();
        assert_eq!(result.cells.len(), 4);
        assert!(result.cells.iter().all(|c| c.curve.len() == 60));
        let regret = fs::read_to_string(dir.path().join("regret.csv")).unwrap();
        let mut lines = regret.lines();
        assert_eq!(lines.next(), Some(REGRET_HEADER));
        assert_eq!(lines.count(), 4 * 6);
        let recall = fs::read_to_string(dir.path().join("recall.csv")).unwrap();
        assert_eq!(recall.lines().count(), 1 + 2 * 3);
        assert!(posterior_path(dir.path(), PolicyKind::ThompsonSampling, FeatureMapKind::Bilinear, 2).exists());
    }

    #[test]
    fn config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let base = config(dir.path());
        for bad in [
            ExperimentConfig { rounds: 0, ..base.clone() },
            ExperimentConfig { k: 0, ..base.clone() },
            ExperimentConfig { seeds: vec![], ..base.clone() },
            ExperimentConfig { lambda: 0.0, ..base.clone() },
            ExperimentConfig { log_stride: 0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Validation(_))));
        }
        let (ds, store, _) = make_synthetic(3, 60, 10, 2).unwrap();
        let too_big = ExperimentConfig { split: (50, 20), ..base.clone() };
        assert!(prepare_inputs(&too_big, &ds, store.clone()).is_err());
        let k_too_big = ExperimentConfig { k: 10, ..base.clone() };
        assert!(prepare_inputs(&k_too_big, &ds, store.clone()).is_err());
        let capped = ExperimentConfig { dim_cap: 8, ..base };
        assert!(matches!(prepare_inputs(&capped, &ds, store), Err(Error::Dimension(_))));
    }
}
