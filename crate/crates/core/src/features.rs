//! Feature maps from a (context, response) embedding pair to the bandit input.
//!
//! * [`FeatureMapKind::Linear`] concatenates the two embeddings, `[c, u]`.
//! * [`FeatureMapKind::Bilinear`] keeps only the context-response cross terms
//!   of the degree-2 polynomial expansion of `[c, u]`: entry `i * L + j` is
//!   `c[i] * u[j]`. A weight vector laid out as `M` flattened row-major then
//!   gives `dot(φ(c, u), w) = c M uᵀ`. Squares, context-context and
//!   response-response products, first-order terms and the bias are absent.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_len, Error, Result};

/// Largest feature dimension accepted by default (`L = 64` for the bilinear map).
pub const DEFAULT_DIM_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureMapKind {
    Linear,
    Bilinear,
}

impl FeatureMapKind {
    pub fn output_dim(self, embedding_dim: usize) -> usize {
        match self {
            FeatureMapKind::Linear => 2 * embedding_dim,
            FeatureMapKind::Bilinear => embedding_dim * embedding_dim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMapKind::Linear => "linear",
            FeatureMapKind::Bilinear => "bilinear",
        }
    }
}

impl fmt::Display for FeatureMapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(FeatureMapKind::Linear),
            "bilinear" => Ok(FeatureMapKind::Bilinear),
            other => Err(Error::Usage(format!(
                "unknown feature map {other:?} (expected linear or bilinear)"
            ))),
        }
    }
}

/// A feature map bound to an embedding width and a dimension cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMap {
    kind: FeatureMapKind,
    embedding_dim: usize,
}

impl FeatureMap {
    pub fn new(kind: FeatureMapKind, embedding_dim: usize, dim_cap: usize) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(Error::Dimension("embedding dim must be positive".into()));
        }
        let out = embedding_dim
            .checked_mul(if kind == FeatureMapKind::Bilinear {
                embedding_dim
            } else {
                2
            })
            .unwrap_or(usize::MAX);
        if out > dim_cap {
            return Err(Error::Dimension(format!(
                "{kind} feature dim {out} (L = {embedding_dim}) exceeds cap {dim_cap}; \
                 reduce the embeddings with PCA first"
            )));
        }
        Ok(Self {
            kind,
            embedding_dim,
        })
    }

    pub fn kind(&self) -> FeatureMapKind {
        self.kind
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn output_dim(&self) -> usize {
        self.kind.output_dim(self.embedding_dim)
    }

    pub fn map(&self, context: &[f64], response: &[f64]) -> Result<FeatureVector> {
        check_len("context embedding", self.embedding_dim, context.len())?;
        check_len("response embedding", self.embedding_dim, response.len())?;
        match self.kind {
            FeatureMapKind::Linear => concat_features(context, response),
            FeatureMapKind::Bilinear => Ok(bilinear_unchecked(context, response)),
        }
    }
}

/// A mapped bandit input. Entries are finite and the length matches the map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature vector has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `[c, u]`, length `2L`.
pub fn concat_features(context: &[f64], response: &[f64]) -> Result<FeatureVector> {
    check_len("response embedding", context.len(), response.len())?;
    let mut out = Vec::with_capacity(2 * context.len());
    out.extend_from_slice(context);
    out.extend_from_slice(response);
    Ok(FeatureVector(out))
}

/// Cross terms `c[i] * u[j]` at index `i * L + j`, subject to the default cap.
pub fn bilinear_features(context: &[f64], response: &[f64]) -> Result<FeatureVector> {
    bilinear_features_capped(context, response, DEFAULT_DIM_CAP)
}

pub fn bilinear_features_capped(
    context: &[f64],
    response: &[f64],
    dim_cap: usize,
) -> Result<FeatureVector> {
    check_len("response embedding", context.len(), response.len())?;
    FeatureMap::new(FeatureMapKind::Bilinear, context.len(), dim_cap)?;
    Ok(bilinear_unchecked(context, response))
}

fn bilinear_unchecked(context: &[f64], response: &[f64]) -> FeatureVector {
    let l = response.len();
    let mut out = vec![0.0; context.len() * l];
    for (row, &ci) in out.chunks_exact_mut(l).zip(context) {
        for (o, &uj) in row.iter_mut().zip(response) {
            *o = ci * uj;
        }
    }
    FeatureVector(out)
}
