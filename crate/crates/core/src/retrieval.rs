//! Exact cosine top-k retrieval over embedded candidate corpora.
//!
//! One index per hierarchy: base terms for base-term identification, one
//! descriptor corpus per facet category. Exact search over the full corpus;
//! the largest real corpus is a few tens of thousands of descriptors, far
//! below where approximate search would pay for its complexity.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::taxonomy::{HierarchyId, Taxonomy, TermCode};

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub code: TermCode,
    /// Unit length; retrieval scores are plain dot products.
    pub vector: EmbeddingVector,
    pub context: String,
}

/// Immutable embedded corpus for one hierarchy.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    tag: HierarchyId,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Retrieved,
    Reranked,
}

/// An ordered candidate list for one query. Scores are non-increasing; ties
/// are ordered by ascending code so results are fully deterministic.
#[derive(Debug, Clone)]
pub struct RankedCandidates {
    pub query_id: String,
    pub stage: Stage,
    pub items: Vec<(TermCode, f64)>,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("hierarchy {0} is not in the catalog")]
    UnknownHierarchy(HierarchyId),
    #[error("hierarchy {0} has no indexable nodes")]
    EmptyHierarchy(HierarchyId),
    #[error("index has no entries")]
    EmptyIndex,
    #[error("k must be at least 1")]
    BadK,
    #[error("duplicate code {0} in index")]
    DuplicateCode(TermCode),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file line {line}: {reason}")]
    BadIndexFile { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Hierarchy roots are organizational nodes, not assignable terms; they are
    /// excluded unless explicitly requested.
    pub include_roots: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            include_roots: false,
        }
    }
}

/// Embeds every node context of a hierarchy into a fresh index, in catalog
/// order. Contexts are embedded in one provider batch and unit-normalized.
pub fn build_index(
    tx: &Taxonomy,
    hierarchy: HierarchyId,
    provider: &dyn EmbeddingProvider,
    opts: BuildOptions,
) -> Result<VectorIndex, RetrievalError> {
    let h = tx
        .hierarchy(hierarchy)
        .ok_or(RetrievalError::UnknownHierarchy(hierarchy))?;
    let nodes: Vec<&crate::taxonomy::TaxonomyNode> = h
        .nodes()
        .iter()
        .filter(|n| opts.include_roots || n.parent.is_some())
        .collect();
    if nodes.is_empty() {
        return Err(RetrievalError::EmptyHierarchy(hierarchy));
    }
    let contexts: Vec<String> = nodes
        .iter()
        .map(|n| h.context_text(&n.code).expect("node is in this hierarchy"))
        .collect();
    let context_refs: Vec<&str> = contexts.iter().map(String::as_str).collect();
    let vectors = provider.embed(&context_refs)?;
    let entries = nodes
        .into_iter()
        .zip(vectors)
        .zip(contexts)
        .map(|((n, v), context)| {
            Ok(IndexEntry {
                code: n.code.clone(),
                vector: v.normalized()?,
                context,
            })
        })
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    VectorIndex::from_entries(hierarchy, entries)
}

impl VectorIndex {
    /// Builds an index from raw entries, normalizing vectors and enforcing
    /// unique codes and a uniform dimension.
    pub fn from_entries(
        tag: HierarchyId,
        entries: Vec<IndexEntry>,
    ) -> Result<VectorIndex, RetrievalError> {
        if entries.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let dimension = entries[0].vector.dimension();
        let mut seen = std::collections::HashSet::new();
        let mut normalized = Vec::with_capacity(entries.len());
        for e in entries {
            if e.vector.dimension() != dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dimension,
                    got: e.vector.dimension(),
                }
                .into());
            }
            if !seen.insert(e.code.clone()) {
                return Err(RetrievalError::DuplicateCode(e.code));
            }
            normalized.push(IndexEntry {
                vector: e.vector.normalized()?,
                ..e
            });
        }
        Ok(VectorIndex {
            dimension,
            tag,
            entries: normalized,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn tag(&self) -> HierarchyId {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn context_of(&self, code: &TermCode) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| &e.code == code)
            .map(|e| e.context.as_str())
    }

    /// Top-k by cosine for an already-embedded query. Full sort (descending
    /// score, ascending code), truncated to k; k larger than the corpus
    /// returns everything.
    pub fn top_k_vector(
        &self,
        query_id: &str,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<RankedCandidates, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::BadK);
        }
        if query.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                got: query.dimension(),
            }
            .into());
        }
        let q = query.normalized().map_err(EmbeddingError::from)?;
        let mut scored: Vec<(TermCode, f64)> = self
            .entries
            .iter()
            .map(|e| {
                let dot: f64 = q
                    .as_slice()
                    .iter()
                    .zip(e.vector.as_slice())
                    .map(|(a, b)| a * b)
                    .sum();
                (e.code.clone(), dot)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(RankedCandidates {
            query_id: query_id.to_owned(),
            stage: Stage::Retrieved,
            items: scored,
        })
    }

    /// Saves as a portable text format: a `dimension<TAB>tag<TAB>count` header,
    /// then `code<TAB>base64 little-endian f32 vector<TAB>context` per entry.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut out = format!("{}\t{}\t{}\n", self.dimension, self.tag, self.entries.len());
        for e in &self.entries {
            let mut bytes = Vec::with_capacity(e.vector.dimension() * 4);
            for v in e.vector.as_slice() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.code,
                BASE64.encode(&bytes),
                e.context
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<VectorIndex, RetrievalError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, reason: String| RetrievalError::BadIndexFile { line, reason };
        let mut lines = text.lines().enumerate();

        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let [dim, tag, count] = fields.as_slice() else {
            return Err(bad(1, "expected dimension<TAB>tag<TAB>count".into()));
        };
        let dimension: usize = dim.parse().map_err(|_| bad(1, "bad dimension".into()))?;
        let tag: HierarchyId = tag.parse().map_err(|_| bad(1, "bad corpus tag".into()))?;
        let count: usize = count.parse().map_err(|_| bad(1, "bad count".into()))?;

        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines {
            let line_no = i + 1;
            let mut parts = line.splitn(3, '\t');
            let (Some(code), Some(blob), Some(context)) =
                (parts.next(), parts.next(), parts.next())
            else {
                return Err(bad(line_no, "expected code<TAB>vector<TAB>context".into()));
            };
            let code: TermCode = code
                .parse()
                .map_err(|_| bad(line_no, format!("bad code {code:?}")))?;
            let bytes = BASE64
                .decode(blob)
                .map_err(|e| bad(line_no, format!("bad base64: {e}")))?;
            if bytes.len() != dimension * 4 {
                return Err(bad(
                    line_no,
                    format!("expected {} vector bytes, got {}", dimension * 4, bytes.len()),
                ));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            entries.push(IndexEntry {
                code,
                vector: EmbeddingVector(values),
                context: context.to_owned(),
            });
        }
        if entries.len() != count {
            return Err(bad(
                1,
                format!("header declares {count} entries, file has {}", entries.len()),
            ));
        }
        // f32 narrowing perturbs norms at the 1e-7 level; re-normalize so the
        // unit-length invariant holds exactly again.
        VectorIndex::from_entries(tag, entries)
    }
}

/// Embeds `query_text` with `provider` and searches the index.
pub fn top_k(
    index: &VectorIndex,
    query_text: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<RankedCandidates, RetrievalError> {
    let query = provider.embed(&[query_text])?.remove(0);
    index.top_k_vector(query_text, &query, k)
}
