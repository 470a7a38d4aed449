//! Embedding providers and the similarity machinery built on them.
//!
//! Everything downstream (retrieval, index building, MNR training) goes through
//! the [`EmbeddingProvider`] trait, so a remote encoder service and the local
//! deterministic embedders are interchangeable. Vectors are f64 end to end;
//! narrowing to f32 happens only at the index persistence boundary.

pub(crate) mod features;
mod mnr;
mod train;

pub use features::{densify, hashed_features, tokenize, SparseFeatures};
pub use mnr::{batch_gradient, batch_loss, mnr_loss, Gradient, MnrOptions, Triplet};
pub use train::{train_toy_embedder, TrainConfig, TrainReport};

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::rng::{fnv1a64, seeded_rng, standard_normal};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Unit-length copy. Errors on the zero vector, which has no direction.
    pub fn normalized(&self) -> Result<EmbeddingVector, EmbeddingError> {
        let norm = self.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(EmbeddingVector(self.0.iter().map(|x| x / norm).collect()))
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("empty input batch")]
    EmptyInput,
    #[error("batch shape mismatch: {queries} queries, {positives} positives, {negative_lists} negative lists")]
    BatchShape {
        queries: usize,
        positives: usize,
        negative_lists: usize,
    },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("remote embedding backend unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("reading model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file line {line}: {reason}")]
    BadModelFile { line: usize, reason: String },
}

/// A source of embeddings. Same text, same instance, same vector; retrieval
/// indexes and caches rely on that. Implementations must be safe for concurrent
/// `embed` calls.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier for cache keying; must change whenever the provider
    /// would produce different vectors (e.g. retrained weights).
    fn provider_id(&self) -> String;

    fn dimension(&self) -> usize;

    /// Embeds a non-empty batch, one vector per text, order preserved.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

/// a·b / (‖a‖‖b‖), in [−1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    let (cos, _, _) = cosine_parts(a.as_slice(), b.as_slice())?;
    Ok(cos)
}

/// Cosine plus both norms, shared by the loss/gradient code that needs them.
pub(crate) fn cosine_parts(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64), EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    Ok((dot / (na * nb), na, nb))
}

/// Raw hashed features as the embedding (identity projection). Fully
/// deterministic with no trained state; the test and offline workhorse.
#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    feature_count: usize,
    hash_seed: u64,
}

impl DeterministicEmbedder {
    pub fn new(feature_count: usize, hash_seed: u64) -> Self {
        DeterministicEmbedder {
            feature_count,
            hash_seed,
        }
    }
}

impl Default for DeterministicEmbedder {
    fn default() -> Self {
        DeterministicEmbedder::new(1024, 42)
    }
}

impl EmbeddingProvider for DeterministicEmbedder {
    fn provider_id(&self) -> String {
        format!("deterministic:f{}:h{}", self.feature_count, self.hash_seed)
    }

    fn dimension(&self) -> usize {
        self.feature_count
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        Ok(texts
            .iter()
            .map(|t| {
                let sparse = hashed_features(t, self.feature_count, self.hash_seed);
                EmbeddingVector(densify(&sparse, self.feature_count))
            })
            .collect())
    }
}

/// Linear projection of hashed features: embedding(x) = W · features(x).
/// Small enough to train on a laptop, rich enough to exercise the full
/// retrieval-training loop.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    /// Row-major d × f.
    pub(crate) weights: Vec<f64>,
    pub(crate) dimension: usize,
    pub(crate) feature_count: usize,
    pub(crate) hash_seed: u64,
}

impl ToyEmbedder {
    /// Gaussian init, entries ~ N(0, 1/f), deterministic per seed.
    pub fn random(dimension: usize, feature_count: usize, hash_seed: u64, init_seed: u64) -> Self {
        let mut rng = seeded_rng(init_seed, "init");
        let std = (1.0 / feature_count as f64).sqrt();
        let weights = (0..dimension * feature_count)
            .map(|_| std * standard_normal(&mut rng))
            .collect();
        ToyEmbedder {
            weights,
            dimension,
            feature_count,
            hash_seed,
        }
    }

    pub fn from_weights(
        weights: Vec<f64>,
        dimension: usize,
        feature_count: usize,
        hash_seed: u64,
    ) -> Self {
        assert_eq!(weights.len(), dimension * feature_count, "weight shape");
        ToyEmbedder {
            weights,
            dimension,
            feature_count,
            hash_seed,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub(crate) fn features(&self, text: &str) -> SparseFeatures {
        hashed_features(text, self.feature_count, self.hash_seed)
    }

    pub(crate) fn project(&self, features: &SparseFeatures) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        for &(j, c) in features {
            for (i, slot) in out.iter_mut().enumerate() {
                *slot += self.weights[i * self.feature_count + j] * c;
            }
        }
        out
    }

    /// Saves weights as text. f64 values print in shortest round-trip form, so
    /// a load returns bit-identical weights.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let mut out = String::new();
        writeln!(out, "toy-embedder v1").unwrap();
        writeln!(
            out,
            "shape {} {} hash_seed {}",
            self.dimension, self.feature_count, self.hash_seed
        )
        .unwrap();
        for row in self.weights.chunks(self.feature_count) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, reason: &str| EmbeddingError::BadModelFile {
            line,
            reason: reason.to_owned(),
        };
        let mut lines = text.lines();
        if lines.next() != Some("toy-embedder v1") {
            return Err(bad(1, "expected header \"toy-embedder v1\""));
        }
        let shape = lines.next().ok_or_else(|| bad(2, "missing shape line"))?;
        let parts: Vec<&str> = shape.split_whitespace().collect();
        let (dimension, feature_count, hash_seed) = match parts.as_slice() {
            ["shape", d, f, "hash_seed", h] => (
                d.parse().map_err(|_| bad(2, "bad dimension"))?,
                f.parse().map_err(|_| bad(2, "bad feature count"))?,
                h.parse().map_err(|_| bad(2, "bad hash seed"))?,
            ),
            _ => return Err(bad(2, "expected \"shape D F hash_seed H\"")),
        };
        let mut weights = Vec::with_capacity(dimension * feature_count);
        for (i, line) in lines.enumerate() {
            for v in line.split_whitespace() {
                weights.push(v.parse::<f64>().map_err(|_| bad(i + 3, "bad weight"))?);
            }
        }
        if weights.len() != dimension * feature_count {
            return Err(bad(
                3,
                &format!(
                    "expected {} weights, found {}",
                    dimension * feature_count,
                    weights.len()
                ),
            ));
        }
        Ok(ToyEmbedder::from_weights(
            weights,
            dimension,
            feature_count,
            hash_seed,
        ))
    }
}

impl EmbeddingProvider for ToyEmbedder {
    fn provider_id(&self) -> String {
        // Weight fingerprint keys caches: retraining must invalidate.
        let mut bytes = Vec::with_capacity(self.weights.len() * 8);
        for w in &self.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        format!(
            "toy:d{}:f{}:h{}:w{:016x}",
            self.dimension,
            self.feature_count,
            self.hash_seed,
            fnv1a64(&bytes)
        )
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector(self.project(&self.features(t))))
            .collect())
    }
}
