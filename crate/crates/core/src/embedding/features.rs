//! Hashed token-count features for the desk-scale embedders.
//!
//! Texts are lowercased and split into alphanumeric token runs; unigrams and
//! adjacent bigrams are hashed into a fixed-size feature space. Collisions are
//! accepted (standard feature hashing); the hash is seed-fixed FNV so feature
//! vectors are stable across processes.

use crate::rng::fnv1a64;

/// Sparse feature vector: (index, count) pairs, ascending by index.
pub type SparseFeatures = Vec<(usize, f64)>;

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn hashed_features(text: &str, feature_count: usize, hash_seed: u64) -> SparseFeatures {
    let tokens = tokenize(text);
    let mut counts: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    let mut bump = |key: &str| {
        let mut bytes = hash_seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(key.as_bytes());
        let idx = (fnv1a64(&bytes) % feature_count as u64) as usize;
        *counts.entry(idx).or_insert(0.0) += 1.0;
    };
    for t in &tokens {
        bump(&format!("1\u{1f}{t}"));
    }
    for pair in tokens.windows(2) {
        bump(&format!("2\u{1f}{}\u{1f}{}", pair[0], pair[1]));
    }
    counts.into_iter().collect()
}

/// Expands sparse features to a dense vector of the full feature-space width.
pub fn densify(features: &SparseFeatures, feature_count: usize) -> Vec<f64> {
    let mut out = vec![0.0; feature_count];
    for &(i, c) in features {
        out[i] = c;
    }
    out
}
