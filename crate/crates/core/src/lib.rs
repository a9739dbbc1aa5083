//! Contextual bandits for online response selection.
//!
//! An agent sees a dialog context and a pool of candidate responses, each
//! given as a fixed-width embedding, returns its top `k` responses and
//! learns from binary feedback. Rewards are modelled with Bayesian logistic
//! regression under a Laplace approximation and explored with Thompson
//! sampling, either on the concatenated pair `[c, u]` ([`FeatureMapKind::Linear`])
//! or on the context-response cross terms `c[i]·u[j]`
//! ([`FeatureMapKind::Bilinear`]), which makes the model `σ(c M uᵀ)`.
//!
//! The [`replay`] module turns a labelled dataset into an online environment
//! and measures average cumulative regret and Recall@k; [`experiment`] runs
//! whole policy × feature-map grids and writes CSV results.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod logreg;
pub mod policy;
pub mod replay;
pub mod text;

pub use corpus::{
    load_dataset, load_embeddings, make_synthetic, write_embeddings, EmbeddingStore,
    ReplayDataset, SyntheticConfig, SyntheticTruth,
};
pub use error::{Error, Result};
pub use features::{bilinear_features, concat_features, FeatureMap, FeatureMapKind, FeatureVector};
pub use logreg::{
    fit_map, predict, sample_weights, sigmoid, NewtonOptions, ObservationHistory, PosteriorState,
};
pub use policy::{AgentConfig, BanditAgent, PolicyKind};
pub use replay::{avg_cumulative_regret, recall_at_k, run_replay, RegretCurve, RoundLog};
