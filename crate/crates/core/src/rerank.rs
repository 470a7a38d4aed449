//! Candidate reranking with a pluggable pair scorer and a confidence cutoff.
//!
//! Retrieval is recall-oriented; the reranker re-scores each (query, candidate
//! context) pair independently and drops everything below a threshold. The
//! production scorer is a remote cross-encoder; a lexical Jaccard baseline is
//! built in for offline use and as a sanity floor.

use thiserror::Error;

use crate::embedding::features::tokenize;
use crate::retrieval::{RankedCandidates, Stage, VectorIndex};
use crate::taxonomy::TermCode;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("no candidates to score")]
    EmptyCandidates,
    #[error("expected retrieval output, got {0:?} stage")]
    WrongStage(Stage),
    #[error("scorer returned {got} scores for {expected} candidates")]
    LengthMismatch { expected: usize, got: usize },
    #[error("score {score} at position {index} is outside [0,1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("candidate {0} has no context in the index")]
    UnknownCandidate(TermCode),
    #[error("remote scorer unavailable: {0}")]
    RemoteUnavailable(String),
}

/// Scores (query, candidate) pairs. Implementations must return one score per
/// candidate, each in [0,1], in candidate order.
pub trait PairScorer: Send + Sync {
    fn scorer_id(&self) -> String;
    fn score_texts(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>, RerankError>;
}

/// Token-set Jaccard overlap. Cheap, deterministic, and surprisingly hard to
/// beat on near-verbatim descriptions.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalJaccard;

impl PairScorer for LexicalJaccard {
    fn scorer_id(&self) -> String {
        "lexical-jaccard".to_owned()
    }

    fn score_texts(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>, RerankError> {
        let q: std::collections::HashSet<String> = tokenize(query).into_iter().collect();
        Ok(candidates
            .iter()
            .map(|c| {
                let t: std::collections::HashSet<String> = tokenize(c).into_iter().collect();
                let inter = q.intersection(&t).count();
                let union = q.union(&t).count();
                if union == 0 {
                    // Two token-free strings share nothing scoreable.
                    0.0
                } else {
                    inter as f64 / union as f64
                }
            })
            .collect())
    }
}

/// Scores `(code, context)` candidates, validating the scorer's contract:
/// one score per candidate, order-preserving, all in [0,1].
pub fn score_pairs(
    scorer: &dyn PairScorer,
    query: &str,
    candidates: &[(TermCode, String)],
) -> Result<Vec<f64>, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let texts: Vec<&str> = candidates.iter().map(|(_, c)| c.as_str()).collect();
    let scores = scorer.score_texts(query, &texts)?;
    if scores.len() != candidates.len() {
        return Err(RerankError::LengthMismatch {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    for (index, &score) in scores.iter().enumerate() {
        if !(0.0..=1.0).contains(&score) {
            return Err(RerankError::ScoreOutOfRange { index, score });
        }
    }
    Ok(scores)
}

/// Re-scores retrieved candidates and keeps those with score >= `tau`, sorted
/// by scorer score descending. Ties keep retrieval order (stable sort), so the
/// output never depends on raw retrieval scores once the scorer has spoken.
/// May legitimately return an empty list; the caller decides what that means.
pub fn rerank_and_filter(
    scorer: &dyn PairScorer,
    query: &str,
    retrieved: &RankedCandidates,
    index: &VectorIndex,
    tau: f64,
) -> Result<RankedCandidates, RerankError> {
    if retrieved.stage != Stage::Retrieved {
        return Err(RerankError::WrongStage(retrieved.stage));
    }
    let candidates = retrieved
        .items
        .iter()
        .map(|(code, _)| {
            let context = index
                .context_of(code)
                .ok_or_else(|| RerankError::UnknownCandidate(code.clone()))?;
            Ok((code.clone(), context.to_owned()))
        })
        .collect::<Result<Vec<_>, RerankError>>()?;
    let scores = score_pairs(scorer, query, &candidates)?;

    let mut items: Vec<(TermCode, f64)> = candidates
        .into_iter()
        .map(|(code, _)| code)
        .zip(scores)
        .filter(|(_, s)| *s >= tau)
        .collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(RankedCandidates {
        query_id: retrieved.query_id.clone(),
        stage: Stage::Reranked,
        items,
    })
}

/// One line of the training export consumed by the cross-encoder trainer:
/// `query<TAB>candidate_context<TAB>label`, label 1 for the gold pairing.
pub fn pair_example_line(query: &str, candidate_context: &str, label: bool) -> String {
    format!("{query}\t{candidate_context}\t{}", u8::from(label))
}
