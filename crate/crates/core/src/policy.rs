//! Acting agents: Thompson sampling over the Laplace posterior, plus greedy
//! and uniform-random baselines.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::features::{FeatureMap, FeatureMapKind};
use crate::linalg::dot;
use crate::logreg::{
    refit_map, sample_weights, InteractionRecord, NewtonOptions, ObservationHistory,
    PosteriorState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    ThompsonSampling,
    Greedy,
    Random,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::ThompsonSampling => "ts",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ts" => Ok(PolicyKind::ThompsonSampling),
            "greedy" => Ok(PolicyKind::Greedy),
            "random" => Ok(PolicyKind::Random),
            other => Err(Error::Usage(format!(
                "unknown policy {other:?} (expected ts, greedy or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub policy: PolicyKind,
    pub map: FeatureMapKind,
    pub embedding_dim: usize,
    pub lambda: f64,
    pub dim_cap: usize,
    pub newton: NewtonOptions,
    pub seed: u64,
}

impl AgentConfig {
    pub fn new(policy: PolicyKind, map: FeatureMapKind, embedding_dim: usize) -> Self {
        Self {
            policy,
            map,
            embedding_dim,
            lambda: 1.0,
            dim_cap: crate::features::DEFAULT_DIM_CAP,
            newton: NewtonOptions::default(),
            seed: 0,
        }
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dim_cap(mut self, cap: usize) -> Self {
        self.dim_cap = cap;
        self
    }

    pub fn newton(mut self, newton: NewtonOptions) -> Self {
        self.newton = newton;
        self
    }

    pub fn build(self) -> Result<BanditAgent> {
        BanditAgent::new(self)
    }
}

/// A bandit learner over one feature map. Select, observe and refit must be
/// called from one thread in sequence.
#[derive(Debug, Clone)]
pub struct BanditAgent {
    policy: PolicyKind,
    map: FeatureMap,
    lambda: f64,
    newton: NewtonOptions,
    posterior: PosteriorState,
    history: ObservationHistory,
    rng: ChaCha8Rng,
    round: u64,
    posterior_draws: u64,
}

impl BanditAgent {
    pub fn new(config: AgentConfig) -> Result<Self> {
        let map = FeatureMap::new(config.map, config.embedding_dim, config.dim_cap)?;
        let dim = map.output_dim();
        Ok(Self {
            policy: config.policy,
            map,
            lambda: config.lambda,
            newton: config.newton,
            posterior: PosteriorState::prior(dim, config.lambda)?,
            history: ObservationHistory::new(dim),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            round: 0,
            posterior_draws: 0,
        })
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn posterior(&self) -> &PosteriorState {
        &self.posterior
    }

    pub fn history(&self) -> &ObservationHistory {
        &self.history
    }

    /// Number of posterior samples drawn so far.
    pub fn posterior_draws(&self) -> u64 {
        self.posterior_draws
    }

    /// Replaces the posterior, e.g. with one loaded from disk or an oracle.
    pub fn set_posterior(&mut self, posterior: PosteriorState) -> Result<()> {
        check_len("posterior", self.map.output_dim(), posterior.dim())?;
        self.posterior = posterior;
        Ok(())
    }

    fn logits(
        &self,
        weights: &[f64],
        context: &[f64],
        candidates: &[impl AsRef<[f64]>],
    ) -> Result<Vec<f64>> {
        candidates
            .iter()
            .map(|u| Ok(dot(self.map.map(context, u.as_ref())?.as_slice(), weights)))
            .collect()
    }

    fn check_inputs(&self, context: &[f64], candidates: &[impl AsRef<[f64]>], k: usize) -> Result<()> {
        if k == 0 || k > candidates.len() {
            return Err(Error::Usage(format!(
                "k = {k} out of range for {} candidates",
                candidates.len()
            )));
        }
        let l = self.map.embedding_dim();
        check_len("context embedding", l, context.len())?;
        for u in candidates {
            check_len("candidate embedding", l, u.as_ref().len())?;
        }
        Ok(())
    }

    /// Returns `k` distinct candidate indices, best first.
    ///
    /// Thompson sampling scores every candidate under a single posterior
    /// draw; greedy scores under the posterior mean. Candidates are ordered
    /// by the logit `φ(c, u)·w`, which orders `σ(φ(c, u)·w)` identically
    /// without saturating, and ties go to the lower index. Random returns a
    /// uniform `k`-subset in random order.
    pub fn select_topk(
        &mut self,
        context: &[f64],
        candidates: &[impl AsRef<[f64]>],
        k: usize,
    ) -> Result<Vec<usize>> {
        self.check_inputs(context, candidates, k)?;
        self.round += 1;
        let weights = match self.policy {
            PolicyKind::Random => {
                return Ok(index::sample(&mut self.rng, candidates.len(), k).into_vec());
            }
            PolicyKind::ThompsonSampling => {
                self.posterior_draws += 1;
                sample_weights(&self.posterior, &mut self.rng)
            }
            PolicyKind::Greedy => self.posterior.mean().to_vec(),
        };
        let scores = self.logits(&weights, context, candidates)?;
        Ok(top_k(&scores, k))
    }

    /// Ranks candidates under the posterior mean, whatever the policy.
    pub fn rank_by_mean(&self, context: &[f64], candidates: &[impl AsRef<[f64]>]) -> Result<Vec<usize>> {
        self.check_inputs(context, candidates, candidates.len().max(1))?;
        let scores = self.logits(self.posterior.mean(), context, candidates)?;
        Ok(top_k(&scores, candidates.len()))
    }

    /// Records the reward for one returned response. Does not refit.
    pub fn observe(&mut self, context: &[f64], chosen: &[f64], reward: f64) -> Result<()> {
        let reward = if reward == 1.0 {
            true
        } else if reward == 0.0 {
            false
        } else {
            return Err(Error::Usage(format!("reward must be 0 or 1, got {reward}")));
        };
        let features = self.map.map(context, chosen)?;
        if self.map.kind() == FeatureMapKind::Bilinear {
            return self.history.push_outer(context, chosen, reward, self.round);
        }
        self.history.push(InteractionRecord {
            features,
            reward,
            round: self.round,
        })
    }

    /// Refits the posterior on the full history, warm-started at the current mean.
    pub fn refit(&mut self) -> Result<()> {
        if self.policy == PolicyKind::Random {
            return Ok(());
        }
        self.posterior = refit_map(&self.history, self.lambda, &self.posterior, &self.newton)?;
        Ok(())
    }
}

/// Indices of the `k` largest scores, descending, ties by ascending index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // partial_cmp so that -0.0 and 0.0 tie
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}
