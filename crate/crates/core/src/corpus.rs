//! Replay datasets, embedding files, and the synthetic bilinear environment.
//!
//! Datasets are TSV files with one candidate response per row:
//!
//! ```text
//! context_id	context_text	response_id	response_text	label
//! ```
//!
//! Rows belonging to one context must be contiguous. Every context carries at
//! least two candidates, exactly one of which is labelled `1`.
//!
//! Embedding files use the `EMB1` binary layout: four magic bytes, `u32` dim,
//! `u32` count, then `count` records of `u32` id length, UTF-8 id bytes and
//! `dim` little-endian `f32` values.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::DEFAULT_DIM_CAP;
use crate::linalg::{dot, Matrix};

pub const DATASET_HEADER: [&str; 5] = [
    "context_id",
    "context_text",
    "response_id",
    "response_text",
    "label",
];

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub response_id: String,
    pub response_text: String,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextEntry {
    pub context_id: String,
    pub context_text: String,
    pub candidates: Vec<Candidate>,
}

impl ContextEntry {
    /// Index of the candidate labelled 1. Validated datasets always have one.
    pub fn true_index(&self) -> Option<usize> {
        self.candidates.iter().position(|c| c.label)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayDataset {
    pub contexts: Vec<ContextEntry>,
}

impl ReplayDataset {
    pub fn new(contexts: Vec<ContextEntry>) -> Result<Self> {
        let ds = Self { contexts };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Smallest candidate pool over all contexts.
    pub fn min_pool_size(&self) -> usize {
        self.contexts
            .iter()
            .map(|c| c.candidates.len())
            .min()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for ctx in &self.contexts {
            if ctx.context_id.is_empty() {
                return Err(Error::Validation("empty context_id".into()));
            }
            if !seen.insert(ctx.context_id.as_str()) {
                return Err(Error::Validation(format!(
                    "context {} appears more than once (rows must be contiguous)",
                    ctx.context_id
                )));
            }
            if ctx.candidates.len() < 2 {
                return Err(Error::Validation(format!(
                    "context {} has {} candidate(s), at least 2 required",
                    ctx.context_id,
                    ctx.candidates.len()
                )));
            }
            let positives = ctx.candidates.iter().filter(|c| c.label).count();
            if positives != 1 {
                return Err(Error::Validation(format!(
                    "context {} has {positives} candidates labelled 1, exactly one required",
                    ctx.context_id
                )));
            }
            let mut responses = HashSet::new();
            for cand in &ctx.candidates {
                if cand.response_id.is_empty() {
                    return Err(Error::Validation(format!(
                        "context {} has a candidate with an empty response_id",
                        ctx.context_id
                    )));
                }
                if !responses.insert(cand.response_id.as_str()) {
                    return Err(Error::Validation(format!(
                        "context {} lists response {} twice",
                        ctx.context_id, cand.response_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every context and response id that `store` cannot resolve, in dataset order.
    pub fn missing_ids(&self, store: &EmbeddingStore) -> Vec<String> {
        let mut missing = Vec::new();
        let mut reported = HashSet::new();
        let mut check = |id: &str| {
            if !store.contains(id) && reported.insert(id.to_string()) {
                missing.push(id.to_string());
            }
        };
        for ctx in &self.contexts {
            check(&ctx.context_id);
            for cand in &ctx.candidates {
                check(&cand.response_id);
            }
        }
        missing
    }

    pub fn check_embeddings(&self, store: &EmbeddingStore) -> Result<()> {
        let missing = self.missing_ids(store);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "{} id(s) missing from embeddings: {}",
                missing.len(),
                missing.join(", ")
            )))
        }
    }

    /// Splits into the first `online` contexts and the following `eval` contexts.
    pub fn split(&self, online: usize, eval: usize) -> Result<(ReplayDataset, ReplayDataset)> {
        if online + eval > self.len() {
            return Err(Error::Validation(format!(
                "split {online}:{eval} needs {} contexts, dataset has {}",
                online + eval,
                self.len()
            )));
        }
        let first = self.contexts[..online].to_vec();
        let second = self.contexts[online..online + eval].to_vec();
        Ok((
            ReplayDataset { contexts: first },
            ReplayDataset { contexts: second },
        ))
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&DATASET_HEADER.join("\t"));
        out.push('\n');
        for ctx in &self.contexts {
            for cand in &ctx.candidates {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    ctx.context_id,
                    ctx.context_text,
                    cand.response_id,
                    cand.response_text,
                    u8::from(cand.label)
                );
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn load_dataset(path: &Path) -> Result<ReplayDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_dataset<R: BufRead>(reader: R) -> Result<ReplayDataset> {
    let mut contexts: Vec<ContextEntry> = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if !saw_header {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols != DATASET_HEADER {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected header `{}`", DATASET_HEADER.join("\\t")),
                });
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != DATASET_HEADER.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let label = match cols[4].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("label must be 0 or 1, found {other:?}"),
                })
            }
        };
        if cols[0].is_empty() || cols[2].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "context_id and response_id must be non-empty".into(),
            });
        }
        let candidate = Candidate {
            response_id: cols[2].to_string(),
            response_text: cols[3].to_string(),
            label,
        };
        match contexts.last_mut() {
            Some(last) if last.context_id == cols[0] => last.candidates.push(candidate),
            _ => contexts.push(ContextEntry {
                context_id: cols[0].to_string(),
                context_text: cols[1].to_string(),
                candidates: vec![candidate],
            }),
        }
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    ReplayDataset::new(contexts)
}

/// Fixed-width embeddings keyed by context or response id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("embedding dim must be positive".into()));
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn lookup(&self, id: &str) -> Result<&[f64]> {
        self.get(id)
            .ok_or_else(|| Error::Validation(format!("id {id} missing from embeddings")))
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("embedding id must be non-empty".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "embedding {id} has length {}, store dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "embedding {id} has non-finite entries"
            )));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Validation("too many embeddings for EMB1".into()))?;
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::Dimension("dim does not fit in u32".into()))?;
        let mut out = Vec::with_capacity(12 + self.entries.len() * (8 + 4 * self.dim));
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (id, vector) in &self.entries {
            let id_len = u32::try_from(id.len())
                .map_err(|_| Error::Validation(format!("id {id} too long")))?;
            out.extend_from_slice(&id_len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for &v in vector {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, offset: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != EMBEDDING_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected \"EMB1\"", String::from_utf8_lossy(magic)),
            });
        }
        let dim_offset = cur.offset;
        let dim = cur.u32("dim")? as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: dim_offset as u64,
                message: "declared dim is 0".into(),
            });
        }
        let count = cur.u32("count")?;
        let mut store = EmbeddingStore::new(dim)?;
        for record in 0..count {
            let record_offset = cur.offset;
            let id_len = cur.u32("id length")? as usize;
            let id_bytes = cur.take(id_len, "id")?;
            let id = std::str::from_utf8(id_bytes).map_err(|_| Error::Format {
                offset: record_offset as u64,
                message: format!("record {record}: id is not valid UTF-8"),
            })?;
            if id.is_empty() {
                return Err(Error::Format {
                    offset: record_offset as u64,
                    message: format!("record {record}: empty id"),
                });
            }
            let raw = cur.take(4 * dim, "vector")?;
            let vector: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format {
                    offset: record_offset as u64,
                    message: format!("record {record} ({id}): non-finite value"),
                });
            }
            if store.entries.insert(id.to_string(), vector).is_some() {
                return Err(Error::Format {
                    offset: record_offset as u64,
                    message: format!("duplicate id {id}"),
                });
            }
        }
        if cur.offset != bytes.len() {
            return Err(Error::Format {
                offset: cur.offset as u64,
                message: format!("{} trailing bytes", bytes.len() - cur.offset),
            });
        }
        Ok(store)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.offset as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}

pub fn write_embeddings(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let bytes = store.to_bytes()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Ground truth of a synthetic environment: the `L×L` matrix `M*` behind
/// `σ(c M* uᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub true_matrix: Matrix,
    /// Rewards are meant to be drawn as Bernoulli(σ(c M* uᵀ)) instead of read from labels.
    pub noise: bool,
    pub seed: u64,
}

impl SyntheticTruth {
    /// `c M* uᵀ`.
    pub fn score(&self, context: &[f64], response: &[f64]) -> f64 {
        let mu = self.true_matrix.mul_vec(response);
        dot(context, &mu)
    }

    /// `M*` flattened row-major, i.e. the bilinear weight vector that reproduces it.
    pub fn flattened(&self) -> Vec<f64> {
        self.true_matrix.as_slice().to_vec()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let m = &self.true_matrix;
        let mut out = String::new();
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub n_contexts: usize,
    pub n_candidates: usize,
    pub seed: u64,
    pub dim_cap: usize,
    pub noise: bool,
}

impl SyntheticConfig {
    pub fn new(dim: usize, n_contexts: usize, n_candidates: usize, seed: u64) -> Self {
        Self {
            dim,
            n_contexts,
            n_candidates,
            seed,
            dim_cap: DEFAULT_DIM_CAP,
            noise: false,
        }
    }

    pub fn with_dim_cap(mut self, cap: usize) -> Self {
        self.dim_cap = cap;
        self
    }

    pub fn with_noise(mut self, noise: bool) -> Self {
        self.noise = noise;
        self
    }

    pub fn generate(&self) -> Result<(ReplayDataset, EmbeddingStore, SyntheticTruth)> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::Dimension("synthetic dim must be at least 1".into()));
        }
        if d.saturating_mul(d) > self.dim_cap {
            return Err(Error::Dimension(format!(
                "bilinear feature dim {} exceeds cap {}",
                d * d,
                self.dim_cap
            )));
        }
        if self.n_candidates < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 candidates per context, got {}",
                self.n_candidates
            )));
        }
        if self.n_contexts == 0 {
            return Err(Error::Validation("need at least one context".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let matrix: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
        let truth = SyntheticTruth {
            true_matrix: Matrix::from_row_major(d, d, matrix)?,
            noise: self.noise,
            seed: self.seed,
        };
        let scale = 1.0 / (d as f64).sqrt();
        // Values are rounded through f32 so that the store survives an EMB1
        // round trip unchanged and labels agree with the reloaded vectors.
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (z * scale) as f32 as f64
                })
                .collect()
        };

        let mut store = EmbeddingStore::new(d)?;
        let mut contexts = Vec::with_capacity(self.n_contexts);
        for i in 0..self.n_contexts {
            let context_id = format!("ctx{i}");
            let c = draw(&mut rng);
            let mut best = (f64::NEG_INFINITY, 0usize);
            let mut candidates = Vec::with_capacity(self.n_candidates);
            for j in 0..self.n_candidates {
                let response_id = format!("ctx{i}-r{j}");
                let u = draw(&mut rng);
                let s = truth.score(&c, &u);
                if s > best.0 {
                    best = (s, j);
                }
                store.insert(response_id.clone(), u)?;
                candidates.push(Candidate {
                    response_id,
                    response_text: String::new(),
                    label: false,
                });
            }
            candidates[best.1].label = true;
            store.insert(context_id.clone(), c)?;
            contexts.push(ContextEntry {
                context_id,
                context_text: String::new(),
                candidates,
            });
        }
        Ok((ReplayDataset::new(contexts)?, store, truth))
    }
}

pub fn make_synthetic(
    dim: usize,
    n_contexts: usize,
    n_candidates: usize,
    seed: u64,
) -> Result<(ReplayDataset, EmbeddingStore, SyntheticTruth)> {
    SyntheticConfig::new(dim, n_contexts, n_candidates, seed).generate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logreg::sigmoid;

    fn tsv(rows: &[&str]) -> String {
        let mut s = DATASET_HEADER.join("\t");
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn two_context_tsv() -> String {
        let mut rows = Vec::new();
        for c in 0..2 {
            for r in 0..10 {
                rows.push(format!(
                    "c{c}\tcontext {c}\tc{c}r{r}\tresponse {r}\t{}",
                    u8::from(r == 3)
                ));
            }
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        tsv(&refs)
    }

    #[test]
    fn parses_two_contexts() {
        let ds = parse_dataset(two_context_tsv().as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.contexts.iter().all(|c| c.candidates.len() == 10));
        assert_eq!(ds.contexts[1].true_index(), Some(3));
        assert_eq!(ds.contexts[0].candidates[0].response_text, "response 0");
    }

    #[test]
    fn tsv_round_trip() {
        let ds = parse_dataset(two_context_tsv().as_bytes()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        ds.write_tsv(&path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn bad_label_reports_line() {
        let text = tsv(&["a\t\ta1\t\t1", "a\t\ta2\t\t2"]);
        match parse_dataset(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count() {
        let text = tsv(&["a\t\ta1\t1"]);
        assert!(matches!(
            parse_dataset(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn missing_header_is_rejected() {
        assert!(matches!(
            parse_dataset("a\t\ta1\t\t1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn two_positives_names_context() {
        let text = tsv(&["ok\t\tr1\t\t1", "ok\t\tr2\t\t0", "bad\t\tr1\t\t1", "bad\t\tr2\t\t1"]);
        match parse_dataset(text.as_bytes()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("bad"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn no_positive_and_single_candidate_rejected() {
        let text = tsv(&["a\t\tr1\t\t0", "a\t\tr2\t\t0"]);
        assert!(matches!(parse_dataset(text.as_bytes()), Err(Error::Validation(_))));
        let text = tsv(&["a\t\tr1\t\t1"]);
        assert!(matches!(parse_dataset(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn non_contiguous_context_rejected() {
        let text = tsv(&["a\t\tr1\t\t1", "a\t\tr2\t\t0", "b\t\tr1\t\t1", "b\t\tr2\t\t0", "a\t\tr3\t\t0"]);
        assert!(matches!(parse_dataset(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn embedding_round_trip() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert("a", vec![1.0, 2.0]).unwrap();
        let bytes = store.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(EmbeddingStore::from_bytes(&bytes).unwrap(), store);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = EmbeddingStore::new(2).unwrap().to_bytes().unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_record() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'a');
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        match EmbeddingStore::from_bytes(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 17);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn zero_dim_and_trailing_bytes_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
        let mut ok = EmbeddingStore::new(1).unwrap().to_bytes().unwrap();
        ok.push(0);
        assert!(EmbeddingStore::from_bytes(&ok).is_err());
    }

    #[test]
    fn insert_checks_dim() {
        let mut store = EmbeddingStore::new(2).unwrap();
        assert!(matches!(store.insert("x", vec![1.0]), Err(Error::Dimension(_))));
        assert!(store.insert("y", vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn missing_ids_are_listed() {
        let ds = parse_dataset(two_context_tsv().as_bytes()).unwrap();
        let mut store = EmbeddingStore::new(1).unwrap();
        store.insert("c0", vec![0.0]).unwrap();
        let missing = ds.missing_ids(&store);
        assert_eq!(missing.len(), 21);
        assert!(missing.contains(&"c1".to_string()));
        assert!(ds.check_embeddings(&store).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic(2, 5, 10, 7).unwrap();
        let b = make_synthetic(2, 5, 10, 7).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bytes().unwrap(), b.1.to_bytes().unwrap());
        assert_eq!(a.2, b.2);
        let c = make_synthetic(2, 5, 10, 8).unwrap();
        assert_ne!(a.2, c.2);
    }

    #[test]
    fn synthetic_label_is_argmax_of_true_score() {
        let (ds, store, truth) = make_synthetic(4, 50, 10, 11).unwrap();
        let m = &truth.true_matrix;
        for ctx in &ds.contexts {
            let c = store.get(&ctx.context_id).unwrap();
            // score recomputed entry by entry, independent of SyntheticTruth::score
            let probs: Vec<f64> = ctx
                .candidates
                .iter()
                .map(|cand| {
                    let u = store.get(&cand.response_id).unwrap();
                    let mut s = 0.0;
                    for i in 0..4 {
                        for j in 0..4 {
                            s += c[i] * m.get(i, j) * u[j];
                        }
                    }
                    sigmoid(s)
                })
                .collect();
            let t = ctx.true_index().unwrap();
            assert!(probs.iter().all(|&p| p <= probs[t]));
        }
        assert!(ds.missing_ids(&store).is_empty());
    }

    #[test]
    fn synthetic_survives_emb1_round_trip() {
        let (_, store, _) = make_synthetic(3, 4, 3, 1).unwrap();
        let back = EmbeddingStore::from_bytes(&store.to_bytes().unwrap()).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn synthetic_rejects_bad_sizes() {
        assert!(make_synthetic(2, 5, 1, 0).is_err());
        assert!(matches!(
            SyntheticConfig::new(80, 10, 10, 0).generate(),
            Err(Error::Dimension(_))
        ));
        assert!(make_synthetic(0, 5, 10, 0).is_err());
    }
}
