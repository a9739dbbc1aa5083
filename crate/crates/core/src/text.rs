//! TF-IDF vectors reduced with PCA, used to featurize raw dialog text for
//! the linear baseline.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{EmbeddingStore, ReplayDataset};
use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, norm2, symmetric_eigen, Matrix};

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TfidfConfig {
    /// Tokens must occur in at least this many documents.
    pub min_df: usize,
    /// Keep at most this many tokens, highest document frequency first.
    pub max_features: Option<usize>,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self {
            min_df: 2,
            max_features: None,
        }
    }
}

/// Sparse vector as `(column, value)` pairs sorted by column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    corpus_size: usize,
}

impl TfidfModel {
    pub fn fit(corpus: &[Vec<String>], config: TfidfConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Validation("cannot fit TF-IDF on an empty corpus".into()));
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = df
            .into_iter()
            .filter(|&(_, n)| n >= config.min_df.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(cap) = config.max_features {
            kept.truncate(cap);
        }
        kept.sort_by(|a, b| a.0.cmp(b.0));

        let n = corpus.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(kept.len());
        for (i, (token, count)) in kept.into_iter().enumerate() {
            vocabulary.insert(token.to_string(), i);
            idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
        }
        Ok(Self {
            vocabulary,
            idf,
            corpus_size: corpus.len(),
        })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.idf.len()
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocabulary.get(token).copied()
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.index_of(token).map(|i| self.idf[i])
    }

    /// Raw counts times idf, L2-normalized. Out-of-vocabulary tokens are
    /// dropped; a document with none left maps to the zero vector.
    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&i) = self.vocabulary.get(t.as_ref()) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v = SparseVector {
            entries: counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect(),
        };
        let norm = v.norm();
        if norm > 0.0 {
            for e in &mut v.entries {
                e.1 /= norm;
            }
        }
        v
    }
}

/// Stateful wrapper: `transform` fails until `fit` has been called.
#[derive(Debug, Clone, Default)]
pub struct TfidfVectorizer {
    config: TfidfConfig,
    model: Option<TfidfModel>,
}

impl TfidfVectorizer {
    pub fn new(config: TfidfConfig) -> Self {
        Self {
            config,
            model: None,
        }
    }

    pub fn fit(&mut self, corpus: &[Vec<String>]) -> Result<&TfidfModel> {
        Ok(self.model.insert(TfidfModel::fit(corpus, self.config)?))
    }

    pub fn model(&self) -> Option<&TfidfModel> {
        self.model.as_ref()
    }

    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> Result<SparseVector> {
        self.model
            .as_ref()
            .map(|m| m.transform(doc))
            .ok_or_else(|| Error::Usage("TF-IDF transform called before fit".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Extra search directions carried alongside the `d` requested ones.
    pub oversample: usize,
    pub seed: u64,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 1000,
            oversample: 8,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `d × V`, rows are orthonormal principal directions.
    components: Matrix,
    /// Variance captured along each component.
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn fit(data: &Matrix, d: usize) -> Result<Self> {
        Self::fit_with(data, d, PcaOptions::default())
    }

    /// Block subspace iteration with Rayleigh-Ritz on the sample covariance.
    ///
    /// The covariance is applied implicitly as `Xcᵀ (Xc q) / (n − 1)`. The
    /// iteration carries `d + oversample` directions and stops once the top
    /// `d` Ritz subspace moves by less than `tol` between sweeps, measured as
    /// `‖(I − P_old) Q_new‖_F`.
    pub fn fit_with(data: &Matrix, d: usize, options: PcaOptions) -> Result<Self> {
        let n = data.rows();
        let v = data.cols();
        if n < 2 {
            return Err(Error::Validation("PCA needs at least 2 rows".into()));
        }
        if d == 0 || d > n.min(v) {
            return Err(Error::Dimension(format!(
                "PCA target dim {d} must be in 1..={} for a {n}x{v} matrix",
                n.min(v)
            )));
        }
        let mut mean = vec![0.0; v];
        for r in 0..n {
            axpy(1.0 / n as f64, data.row(r), &mut mean);
        }
        let mut centered = data.clone();
        for r in 0..n {
            for (x, m) in centered.row_mut(r).iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        let scale = 1.0 / (n as f64 - 1.0);
        let block = (d + options.oversample).min(v);

        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut basis: Vec<Vec<f64>> = (0..block)
            .map(|_| (0..v).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        orthonormalize(&mut basis);

        let mut previous: Option<Vec<Vec<f64>>> = None;
        let mut residual = f64::INFINITY;
        for _ in 0..options.max_iter {
            let applied: Vec<Vec<f64>> = basis
                .iter()
                .map(|q| covariance_apply(&centered, q, scale))
                .collect();
            let mut projected = Matrix::zeros(block, block);
            for i in 0..block {
                for j in i..block {
                    let t = dot(&basis[i], &applied[j]);
                    projected.set(i, j, t);
                    projected.set(j, i, t);
                }
            }
            let (values, vectors) = symmetric_eigen(&projected)?;
            let ritz = rotate(&basis, &vectors);
            let top: Vec<Vec<f64>> = ritz[..d].to_vec();
            if let Some(prev) = &previous {
                residual = subspace_distance(prev, &top);
                if residual <= options.tol {
                    let explained = values[..d].iter().map(|x| x.max(0.0)).collect();
                    return Ok(Self::finish(mean, top, explained));
                }
            } else if block == v {
                // the block spans the whole space, so Ritz vectors are exact
                let explained = values[..d].iter().map(|x| x.max(0.0)).collect();
                return Ok(Self::finish(mean, top, explained));
            }
            previous = Some(top);
            basis = rotate(&applied, &vectors);
            orthonormalize(&mut basis);
        }
        Err(Error::Numerical(format!(
            "PCA subspace iteration did not converge in {} iterations (residual {residual:e})",
            options.max_iter
        )))
    }

    fn finish(mean: Vec<f64>, mut rows: Vec<Vec<f64>>, explained_variance: Vec<f64>) -> Self {
        for row in &mut rows {
            let mut pivot = 0;
            for (i, x) in row.iter().enumerate() {
                if x.abs() > row[pivot].abs() {
                    pivot = i;
                }
            }
            if row[pivot] < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let components = Matrix::from_rows(&rows).expect("rows share the input width");
        Self {
            mean,
            components,
            explained_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Coordinates of `x − mean` along each component.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("PCA input", self.input_dim(), x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.mul_vec(&centered))
    }

    /// `mean + Cᵀ y`.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("PCA coordinates", self.dim(), y.len())?;
        let mut out = self.mean.clone();
        for (k, &coef) in y.iter().enumerate() {
            axpy(coef, self.components.row(k), &mut out);
        }
        Ok(out)
    }
}

fn covariance_apply(centered: &Matrix, q: &[f64], scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; centered.cols()];
    for r in 0..centered.rows() {
        let row = centered.row(r);
        let p = dot(row, q);
        if p != 0.0 {
            axpy(p * scale, row, &mut out);
        }
    }
    out
}

/// Columns of `vectors` combine the rows of `basis`: `out[j] = Σᵢ vectors[i][j] · basis[i]`.
fn rotate(basis: &[Vec<f64>], vectors: &Matrix) -> Vec<Vec<f64>> {
    let len = basis[0].len();
    (0..vectors.cols())
        .map(|j| {
            let mut out = vec![0.0; len];
            for (i, b) in basis.iter().enumerate() {
                axpy(vectors.get(i, j), b, &mut out);
            }
            out
        })
        .collect()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. A vector that
/// collapses (rank-deficient data) is replaced by the first coordinate axis
/// that is still independent of the others.
fn orthonormalize(vectors: &mut [Vec<f64>]) {
    let len = vectors.first().map_or(0, Vec::len);
    for j in 0..vectors.len() {
        let (done, rest) = vectors.split_at_mut(j);
        let v = &mut rest[0];
        let original = norm2(v).max(f64::MIN_POSITIVE);
        for _ in 0..2 {
            for q in done.iter() {
                let p = dot(q, v);
                axpy(-p, q, v);
            }
        }
        let mut norm = norm2(v);
        if norm <= 1e-10 * original || norm == 0.0 {
            for axis in 0..len {
                let mut e = vec![0.0; len];
                e[axis] = 1.0;
                for _ in 0..2 {
                    for q in done.iter() {
                        let p = dot(q, &e);
                        axpy(-p, q, &mut e);
                    }
                }
                let n = norm2(&e);
                if n > 1e-6 {
                    *v = e;
                    norm = n;
                    break;
                }
            }
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn subspace_distance(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for q in new {
        let mut r = q.clone();
        for p in old {
            let c = dot(p, q);
            axpy(-c, p, &mut r);
        }
        total += dot(&r, &r);
    }
    total.sqrt()
}

/// Embeds every context and response text of `dataset` with TF-IDF followed
/// by PCA down to `dim`. A response id shared by several contexts is
/// embedded once, from its first occurrence.
pub fn featurize_tfidf_pca(
    dataset: &ReplayDataset,
    dim: usize,
    config: TfidfConfig,
) -> Result<EmbeddingStore> {
    let mut ids: Vec<&str> = Vec::new();
    let mut docs: Vec<Vec<String>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for ctx in &dataset.contexts {
        if seen.insert(ctx.context_id.as_str()) {
            ids.push(&ctx.context_id);
            docs.push(tokenize(&ctx.context_text));
        }
        for cand in &ctx.candidates {
            if seen.insert(cand.response_id.as_str()) {
                ids.push(&cand.response_id);
                docs.push(tokenize(&cand.response_text));
            }
        }
    }
    if docs.iter().all(Vec::is_empty) {
        return Err(Error::Validation("dataset has no text to featurize".into()));
    }
    let model = TfidfModel::fit(&docs, config)?;
    let vocab = model.vocabulary_size();
    if dim > vocab {
        return Err(Error::Dimension(format!(
            "requested dim {dim} exceeds the vocabulary size {vocab}"
        )));
    }
    let mut data = Vec::with_capacity(docs.len() * vocab);
    for doc in &docs {
        data.extend(model.transform(doc).to_dense(vocab));
    }
    let matrix = Matrix::from_row_major(docs.len(), vocab, data)?;
    let pca = PcaModel::fit(&matrix, dim)?;
    let mut store = EmbeddingStore::new(dim)?;
    for (r, id) in ids.into_iter().enumerate() {
        store.insert(id, pca.transform(matrix.row(r))?)?;
    }
    Ok(store)
}
