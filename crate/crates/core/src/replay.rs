//! Offline replay of a labelled dataset as an online bandit environment.
//!
//! Each round a context is drawn uniformly with replacement, the agent
//! returns `k` candidates, every returned candidate is rewarded with its
//! label, and the agent refits once. The round's regret increment is 1 when
//! the true response is not among the `k` returned, else 0; the average
//! cumulative regret after `T` rounds is the mean of the first `T`
//! increments (the optimal reward is 1 every round).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EmbeddingStore, ReplayDataset, SyntheticTruth};
use crate::error::{Error, Result};
use crate::logreg::sigmoid;
use crate::policy::BanditAgent;

/// Where per-response rewards come from during replay.
#[derive(Debug, Clone, Copy, Default)]
pub enum RewardSource<'a> {
    /// The dataset label of the returned response.
    #[default]
    Labels,
    /// A Bernoulli draw with success probability `σ(c M* uᵀ)`.
    Bernoulli(&'a SyntheticTruth),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: u64,
    pub context_id: String,
    pub returned: Vec<String>,
    pub rewards: Vec<u8>,
    pub regret: u8,
    /// Only under Bernoulli rewards: best `σ(c M* uᵀ)` in the pool minus the best among those returned.
    pub pseudo_regret: Option<f64>,
}

/// Average cumulative regret after each round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretCurve {
    values: Vec<f64>,
}

impl RegretCurve {
    pub fn from_increments(increments: &[u8]) -> Self {
        let mut total = 0u64;
        let values = increments
            .iter()
            .enumerate()
            .map(|(t, &inc)| {
                total += u64::from(inc);
                total as f64 / (t + 1) as f64
            })
            .collect();
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `R(t)` for 1-based `t`.
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.values.get(i).copied())
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub curve: RegretCurve,
    pub logs: Vec<RoundLog>,
}

/// Mean of the 0/1 regret increments.
pub fn avg_cumulative_regret(increments: &[u8]) -> Result<f64> {
    if increments.is_empty() {
        return Err(Error::Usage("regret of an empty round sequence".into()));
    }
    if let Some(bad) = increments.iter().find(|&&v| v > 1) {
        return Err(Error::Usage(format!("regret increments must be 0 or 1, got {bad}")));
    }
    let total: u64 = increments.iter().map(|&v| u64::from(v)).sum();
    Ok(total as f64 / increments.len() as f64)
}

/// A dataset with embeddings resolved to indices, ready for tight loops.
pub(crate) struct ResolvedPool<'a> {
    pub contexts: Vec<&'a [f64]>,
    pub candidates: Vec<Vec<&'a [f64]>>,
    pub truth: Vec<usize>,
}

impl<'a> ResolvedPool<'a> {
    pub fn new(dataset: &ReplayDataset, embeddings: &'a EmbeddingStore) -> Result<Self> {
        dataset.validate()?;
        dataset.check_embeddings(embeddings)?;
        let mut pool = ResolvedPool {
            contexts: Vec::with_capacity(dataset.len()),
            candidates: Vec::with_capacity(dataset.len()),
            truth: Vec::with_capacity(dataset.len()),
        };
        for ctx in &dataset.contexts {
            pool.contexts.push(embeddings.lookup(&ctx.context_id)?);
            pool.candidates.push(
                ctx.candidates
                    .iter()
                    .map(|c| embeddings.lookup(&c.response_id))
                    .collect::<Result<_>>()?,
            );
            pool.truth
                .push(ctx.true_index().expect("validated dataset has a true response"));
        }
        Ok(pool)
    }
}

/// Replays `rounds` rounds, returning `k` responses per round.
pub fn run_replay(
    dataset: &ReplayDataset,
    embeddings: &EmbeddingStore,
    agent: &mut BanditAgent,
    rounds: usize,
    k: usize,
    seed: u64,
) -> Result<ReplayOutcome> {
    run_replay_with(dataset, embeddings, agent, rounds, k, seed, RewardSource::Labels, |_| {})
}

/// [`run_replay`] with a choice of reward source and a progress callback
/// invoked with the 1-based round number after each round.
#[allow(clippy::too_many_arguments)]
pub fn run_replay_with(
    dataset: &ReplayDataset,
    embeddings: &EmbeddingStore,
    agent: &mut BanditAgent,
    rounds: usize,
    k: usize,
    seed: u64,
    rewards: RewardSource<'_>,
    mut progress: impl FnMut(usize),
) -> Result<ReplayOutcome> {
    if dataset.is_empty() {
        return Err(Error::Validation("replay dataset is empty".into()));
    }
    if rounds == 0 {
        return Err(Error::Usage("rounds must be at least 1".into()));
    }
    if k == 0 || k >= dataset.min_pool_size() {
        return Err(Error::Usage(format!(
            "k = {k} must be in 1..{} (smallest candidate pool)",
            dataset.min_pool_size()
        )));
    }
    if embeddings.dim() != agent.feature_map().embedding_dim() {
        return Err(Error::Dimension(format!(
            "embeddings have dim {}, agent expects {}",
            embeddings.dim(),
            agent.feature_map().embedding_dim()
        )));
    }
    let pool = ResolvedPool::new(dataset, embeddings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut increments = Vec::with_capacity(rounds);
    let mut logs = Vec::with_capacity(rounds);

    for t in 1..=rounds {
        let ci = rng.random_range(0..pool.contexts.len());
        let context = pool.contexts[ci];
        let candidates = &pool.candidates[ci];
        let picked = agent.select_topk(context, candidates, k)?;

        let mut round_rewards = Vec::with_capacity(k);
        for &j in &picked {
            let reward = match rewards {
                RewardSource::Labels => u8::from(j == pool.truth[ci]),
                RewardSource::Bernoulli(truth) => {
                    let p = sigmoid(truth.score(context, candidates[j]));
                    u8::from(rng.random_bool(p))
                }
            };
            agent.observe(context, candidates[j], f64::from(reward))?;
            round_rewards.push(reward);
        }
        agent.refit()?;

        let regret = u8::from(!picked.contains(&pool.truth[ci]));
        increments.push(regret);
        let pseudo_regret = match rewards {
            RewardSource::Labels => None,
            RewardSource::Bernoulli(truth) => {
                let probs: Vec<f64> = candidates
                    .iter()
                    .map(|u| sigmoid(truth.score(context, u)))
                    .collect();
                let best = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let got = picked
                    .iter()
                    .map(|&j| probs[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                Some(best - got)
            }
        };
        let ctx = &dataset.contexts[ci];
        logs.push(RoundLog {
            round: t as u64,
            context_id: ctx.context_id.clone(),
            returned: picked
                .iter()
                .map(|&j| ctx.candidates[j].response_id.clone())
                .collect(),
            rewards: round_rewards,
            regret,
            pseudo_regret,
        });
        progress(t);
    }

    Ok(ReplayOutcome {
        curve: RegretCurve::from_increments(&increments),
        logs,
    })
}

/// Fraction of contexts whose true response is ranked in the top `k` under
/// the agent's posterior mean (no sampling, ties to the lower index).
pub fn recall_at_k(
    agent: &BanditAgent,
    eval: &ReplayDataset,
    embeddings: &EmbeddingStore,
    k: usize,
) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::Validation("no evaluation contexts".into()));
    }
    if k == 0 || k > eval.min_pool_size() {
        return Err(Error::Usage(format!(
            "k = {k} exceeds the candidate pool size {}",
            eval.min_pool_size()
        )));
    }
    let pool = ResolvedPool::new(eval, embeddings)?;
    let mut hits = 0usize;
    for ((context, candidates), &truth) in pool.contexts.iter().zip(&pool.candidates).zip(&pool.truth) {
        let ranking = agent.rank_by_mean(context, candidates)?;
        if ranking[..k].contains(&truth) {
            hits += 1;
        }
    }
    Ok(hits as f64 / eval.len() as f64)
}
