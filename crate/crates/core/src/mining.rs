//! Taxonomy-based hard-negative mining.
//!
//! For a target term t, negatives are its siblings C_pa(t) first, then terms
//! sampled without replacement from the same hierarchy with probability
//! proportional to S(t,v) = (1 + o_facets(t,v)) / (1 + d_hop(t,v)), where
//! o_facets counts shared implicit facets and d_hop is the tree distance.
//! Near neighbors with overlapping facet profiles are the hardest negatives,
//! so they are sampled most often.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::rng::{seeded_rng, uniform_f64};
use crate::taxonomy::{Taxonomy, TaxonomyError, TermCode};

#[derive(Debug, Clone)]
pub struct MiningConfig {
    /// Total negatives per target, siblings included. Default 10 matches the
    /// candidate-list depth used downstream at reranking time.
    pub n_negatives: usize,
    pub rng_seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            n_negatives: 10,
            rng_seed: 42,
        }
    }
}

/// How a negative entered the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Sibling,
    Sampled,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Sibling => "SIBLING",
            Provenance::Sampled => "SAMPLED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinedNegative {
    pub code: TermCode,
    pub provenance: Provenance,
    /// The S(t,v) value of this candidate (not the normalized probability).
    pub score: f64,
}

/// Mining result for one target. Siblings precede sampled entries.
#[derive(Debug, Clone)]
pub struct HardNegativeSet {
    pub target: TermCode,
    pub negatives: Vec<MinedNegative>,
    /// True when fewer than the requested negatives exist in the hierarchy.
    /// Not an error: desk-scale fixtures and sparse branches hit this routinely.
    pub pool_exhausted: bool,
}

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("candidate score of a node against itself is undefined")]
    SameNode,
    #[error("empty sampling pool")]
    EmptyPool,
    #[error("n_negatives must be at least 1")]
    BadConfig,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Number of implicit facets shared by t and v.
pub fn facet_overlap(t: &TermCode, v: &TermCode, tx: &Taxonomy) -> Result<usize, MiningError> {
    let ft = tx.implicit_facets(t)?;
    let fv = tx.implicit_facets(v)?;
    Ok(ft.intersection(fv).count())
}

/// S(t,v) = (1 + o_facets) / (1 + d_hop). Always positive; grows with facet
/// overlap and shrinks with tree distance.
pub fn candidate_score(t: &TermCode, v: &TermCode, tx: &Taxonomy) -> Result<f64, MiningError> {
    if t == v {
        return Err(MiningError::SameNode);
    }
    let overlap = facet_overlap(t, v, tx)?;
    let hop = tx.hop_distance(t, v)?;
    Ok((1.0 + overlap as f64) / (1.0 + hop as f64))
}

/// Normalizes candidate scores over `pool` into a sampling distribution
/// p(v|t) = S(t,v) / Σ_u S(t,u). The pool must not contain t.
pub fn sampling_distribution(
    t: &TermCode,
    pool: &[TermCode],
    tx: &Taxonomy,
) -> Result<BTreeMap<TermCode, f64>, MiningError> {
    if pool.is_empty() {
        return Err(MiningError::EmptyPool);
    }
    let mut scores = Vec::with_capacity(pool.len());
    for v in pool {
        scores.push(candidate_score(t, v, tx)?);
    }
    let total: f64 = scores.iter().sum();
    Ok(pool
        .iter()
        .cloned()
        .zip(scores.iter().map(|s| s / total))
        .collect())
}

/// Mines up to `cfg.n_negatives` hard negatives for `t`.
///
/// Siblings come first (truncated to the N best by candidate score when there
/// are too many, ties broken by code order). Remaining slots are sampled
/// without replacement from the same hierarchy, excluding t, its ancestors
/// (label-leaking supersets), and the already-taken siblings. Deterministic:
/// the RNG stream is derived from (seed, target), so mining different targets
/// in parallel cannot perturb each other.
pub fn mine_hard_negatives(
    t: &TermCode,
    cfg: &MiningConfig,
    tx: &Taxonomy,
) -> Result<HardNegativeSet, MiningError> {
    if cfg.n_negatives == 0 {
        return Err(MiningError::BadConfig);
    }
    let node = tx.node(t)?;
    let hierarchy = tx
        .hierarchy(node.hierarchy)
        .expect("node came from this taxonomy");

    let mut negatives = Vec::with_capacity(cfg.n_negatives);

    let mut siblings: Vec<(TermCode, f64)> = Vec::new();
    for s in tx.siblings(t)? {
        let score = candidate_score(t, &s, tx)?;
        siblings.push((s, score));
    }
    // Descending score, ascending code on ties; BTreeSet order already gave us
    // ascending codes, and the sort is stable.
    siblings.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("scores are finite"));
    siblings.truncate(cfg.n_negatives);
    for (code, score) in &siblings {
        negatives.push(MinedNegative {
            code: code.clone(),
            provenance: Provenance::Sibling,
            score: *score,
        });
    }

    let remaining = cfg.n_negatives - negatives.len();
    let mut excluded: HashSet<&TermCode> = HashSet::new();
    excluded.insert(t);
    excluded.extend(hierarchy.ancestors(t).expect("node is in this hierarchy"));
    let taken = tx.siblings(t)?;

    let mut pool: Vec<(TermCode, f64)> = Vec::new();
    for cand in hierarchy.nodes() {
        if excluded.contains(&cand.code) || taken.contains(&cand.code) {
            continue;
        }
        pool.push((cand.code.clone(), candidate_score(t, &cand.code, tx)?));
    }

    let mut rng = seeded_rng(cfg.rng_seed, t.as_str());
    let mut weight_total: f64 = pool.iter().map(|(_, s)| s).sum();
    for _ in 0..remaining.min(pool.len()) {
        // Cumulative-weight draw; removing the winner renormalizes implicitly.
        let mut u = uniform_f64(&mut rng) * weight_total;
        let mut chosen = pool.len() - 1;
        for (i, (_, s)) in pool.iter().enumerate() {
            u -= s;
            if u < 0.0 {
                chosen = i;
                break;
            }
        }
        let (code, score) = pool.swap_remove(chosen);
        weight_total -= score;
        negatives.push(MinedNegative {
            code,
            provenance: Provenance::Sampled,
            score,
        });
    }

    Ok(HardNegativeSet {
        target: t.clone(),
        pool_exhausted: negatives.len() < cfg.n_negatives,
        negatives,
    })
}

/// Line format used by the CLI export: `target<TAB>negative<TAB>provenance<TAB>score`.
pub fn export_line(set: &HardNegativeSet, negative: &MinedNegative) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        set.target,
        negative.code,
        negative.provenance.as_str(),
        negative.score
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{Taxonomy, CATALOG_HEADER};
    use std::collections::BTreeSet;

    fn code(s: &str) -> TermCode {
        s.parse().unwrap()
    }

    fn catalog(records: &str) -> Taxonomy {
        Taxonomy::from_catalog_str(&format!("{CATALOG_HEADER}\n{records}")).unwrap()
    }

    // BASE:        R0000
    //            /   |   \
    //        A0001 A0002 A0003      A0001..3 siblings
    //        /   \
    //    B0001   B0002
    // Facets: shared/disjoint implicit sets for overlap tests.
    fn fixture() -> Taxonomy {
        catalog(
            "R0000\troot\tBASE\t\t\t\n\
             A0001\ta1\tBASE\tR0000\tF04.D0001;F28.E0001\t\n\
             A0002\ta2\tBASE\tR0000\tF28.E0001\t\n\
             A0003\ta3\tBASE\tR0000\t\t\n\
             B0001\tb1\tBASE\tA0001\tF04.D0001;F28.E0001\t\n\
             B0002\tb2\tBASE\tA0001\tF04.D0002\t\n\
             F0400\tsource\tF04\t\t\t\n\
             D0001\tcow\tF04\tF0400\t\t\n\
             D0002\tgoat\tF04\tF0400\t\t\n\
             F2800\tprocess\tF28\t\t\t\n\
             E0001\tboiled\tF28\tF2800\t\t\n",
        )
    }

    #[test]
    fn overlap_counts_shared_pairs() {
        let tx = fixture();
        assert_eq!(facet_overlap(&code("A0001"), &code("B0001"), &tx).unwrap(), 2);
        assert_eq!(facet_overlap(&code("A0001"), &code("A0002"), &tx).unwrap(), 1);
        assert_eq!(facet_overlap(&code("A0001"), &code("B0002"), &tx).unwrap(), 0);
        assert_eq!(facet_overlap(&code("A0003"), &code("B0002"), &tx).unwrap(), 0);
    }

    #[test]
    fn overlap_matches_double_loop_oracle() {
        let tx = fixture();
        let codes = ["A0001", "A0002", "A0003", "B0001", "B0002", "R0000"];
        for t in codes {
            for v in codes {
                let (t, v) = (code(t), code(v));
                let ft = tx.implicit_facets(&t).unwrap();
                let fv = tx.implicit_facets(&v).unwrap();
                let mut count = 0;
                for a in ft {
                    for b in fv {
                        if a == b {
                            count += 1;
                        }
                    }
                }
                assert_eq!(facet_overlap(&t, &v, &tx).unwrap(), count);
            }
        }
    }

    #[test]
    fn score_substitutions() {
        // S0001/S0002 are siblings sharing both facets; S0002's child C0001
        // shares exactly one facet with it.
        let tx = catalog(
            "R0000\troot\tBASE\t\t\t\n\
             S0001\ts1\tBASE\tR0000\tF04.D0001;F04.D0002\t\n\
             S0002\ts2\tBASE\tR0000\tF04.D0001;F04.D0002\t\n\
             S0003\ts3\tBASE\tR0000\t\t\n\
             C0001\tc1\tBASE\tS0002\tF04.D0001\t\n\
             F0400\tsource\tF04\t\t\t\n\
             D0001\tcow\tF04\tF0400\t\t\n\
             D0002\tgoat\tF04\tF0400\t\t\n",
        );
        // Siblings, 0 shared facets: (1+0)/(1+2) = 1/3.
        let s = candidate_score(&code("S0001"), &code("S0003"), &tx).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
        // Siblings, 2 shared facets: (1+2)/(1+2) = 1.
        let s = candidate_score(&code("S0001"), &code("S0002"), &tx).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        // Parent/child, 1 shared facet: (1+1)/(1+1) = 1.
        let s = candidate_score(&code("S0002"), &code("C0001"), &tx).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(matches!(
            candidate_score(&code("S0001"), &code("S0001"), &tx),
            Err(MiningError::SameNode)
        ));
    }

    #[test]
    fn score_monotonicity() {
        // Fixed overlap: farther nodes score strictly lower.
        let tx = fixture();
        let near = candidate_score(&code("A0003"), &code("A0002"), &tx).unwrap(); // hop 2
        let far = candidate_score(&code("A0003"), &code("B0002"), &tx).unwrap(); // hop 3
        assert!(far < near);
        // Fixed hop: more overlap scores strictly higher.
        let plain = candidate_score(&code("A0003"), &code("A0002"), &tx).unwrap(); // overlap 0
        let shared = candidate_score(&code("A0002"), &code("A0001"), &tx).unwrap(); // overlap 1, hop 2
        assert!(shared > plain);
    }

    #[test]
    fn distribution_normalizes() {
        let tx = fixture();
        let pool = vec![code("A0002"), code("A0003"), code("B0001"), code("B0002")];
        let dist = sampling_distribution(&code("A0001"), &pool, &tx).unwrap();
        let total: f64 = dist.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for v in &pool {
            let expected = candidate_score(&code("A0001"), v, &tx).unwrap();
            let sum: f64 = pool
                .iter()
                .map(|u| candidate_score(&code("A0001"), u, &tx).unwrap())
                .sum();
            assert!((dist[v] - expected / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn distribution_examples() {
        let tx = fixture();
        let single = sampling_distribution(&code("A0001"), &[code("B0002")], &tx).unwrap();
        assert!((single[&code("B0002")] - 1.0).abs() < 1e-15);

        // Scores 1/3 (A0003, sibling no overlap) and 1 (hand-picked pair) → 1/4, 3/4.
        let pool = vec![code("A0003"), code("B0001")];
        let t = code("A0002");
        let s1 = candidate_score(&t, &pool[0], &tx).unwrap();
        let s2 = candidate_score(&t, &pool[1], &tx).unwrap();
        let dist = sampling_distribution(&t, &pool, &tx).unwrap();
        assert!((dist[&pool[0]] - s1 / (s1 + s2)).abs() < 1e-12);
        assert!((dist[&pool[1]] - s2 / (s1 + s2)).abs() < 1e-12);

        assert!(matches!(
            sampling_distribution(&t, &[], &tx),
            Err(MiningError::EmptyPool)
        ));
    }

    #[test]
    fn siblings_fill_first() {
        let tx = fixture();
        // A0001 has siblings A0002, A0003. N = 2 → exactly the siblings.
        let cfg = MiningConfig {
            n_negatives: 2,
            rng_seed: 42,
        };
        let set = mine_hard_negatives(&code("A0001"), &cfg, &tx).unwrap();
        let got: BTreeSet<&str> = set.negatives.iter().map(|n| n.code.as_str()).collect();
        assert_eq!(got, BTreeSet::from(["A0002", "A0003"]));
        assert!(set
            .negatives
            .iter()
            .all(|n| n.provenance == Provenance::Sibling));
        assert!(!set.pool_exhausted);
    }

    #[test]
    fn sampled_after_siblings_and_no_ancestors() {
        let tx = fixture();
        let cfg = MiningConfig {
            n_negatives: 4,
            rng_seed: 42,
        };
        let set = mine_hard_negatives(&code("B0001"), &cfg, &tx).unwrap();
        // Sibling B0002 first, then sampled from {A0002, A0003}: ancestors
        // A0001 and R0000 are excluded, so the pool has exactly 2 candidates.
        assert_eq!(set.negatives[0].code, code("B0002"));
        assert_eq!(set.negatives[0].provenance, Provenance::Sibling);
        let sampled: BTreeSet<&str> = set.negatives[1..]
            .iter()
            .map(|n| n.code.as_str())
            .collect();
        assert_eq!(sampled, BTreeSet::from(["A0002", "A0003"]));
        // Requested 4, only 3 available.
        assert_eq!(set.negatives.len(), 3);
        assert!(set.pool_exhausted);
    }

    #[test]
    fn root_with_single_child_samples_one() {
        let tx = catalog(
            "R0000\troot\tBASE\t\t\t\n\
             A0001\ta\tBASE\tR0000\t\t\n\
             B0001\tb\tBASE\tA0001\t\t\n",
        );
        // Target A0001: no siblings; pool = {B0001} (R0000 is its ancestor).
        let cfg = MiningConfig {
            n_negatives: 1,
            rng_seed: 7,
        };
        let set = mine_hard_negatives(&code("A0001"), &cfg, &tx).unwrap();
        assert_eq!(set.negatives.len(), 1);
        assert_eq!(set.negatives[0].code, code("B0001"));
        assert_eq!(set.negatives[0].provenance, Provenance::Sampled);
    }

    #[test]
    fn sibling_overflow_keeps_highest_scores() {
        // Root has many children; target's siblings tie on hop distance, so facet
        // overlap decides the score ranking.
        let tx = catalog(
            "R0000\troot\tBASE\t\t\t\n\
             T0000\ttarget\tBASE\tR0000\tF04.D0001;F04.D0002\t\n\
             S0001\ts1\tBASE\tR0000\tF04.D0001;F04.D0002\t\n\
             S0002\ts2\tBASE\tR0000\tF04.D0001\t\n\
             S0003\ts3\tBASE\tR0000\t\t\n\
             S0004\ts4\tBASE\tR0000\t\t\n\
             F0400\tsource\tF04\t\t\t\n\
             D0001\tcow\tF04\tF0400\t\t\n\
             D0002\tgoat\tF04\tF0400\t\t\n",
        );
        let cfg = MiningConfig {
            n_negatives: 3,
            rng_seed: 42,
        };
        let set = mine_hard_negatives(&code("T0000"), &cfg, &tx).unwrap();
        let got: Vec<&str> = set.negatives.iter().map(|n| n.code.as_str()).collect();
        // Scores: S0001 = 3/3, S0002 = 2/3, S0003 = S0004 = 1/3; tie broken by code.
        assert_eq!(got, vec!["S0001", "S0002", "S0003"]);
        assert!(set
            .negatives
            .iter()
            .all(|n| n.provenance == Provenance::Sibling));
    }

    #[test]
    fn deterministic_and_exclusive() {
        let tx = fixture();
        let cfg = MiningConfig {
            n_negatives: 4,
            rng_seed: 42,
        };
        for target in ["A0001", "A0002", "B0001", "B0002", "R0000"] {
            let t = code(target);
            let a = mine_hard_negatives(&t, &cfg, &tx).unwrap();
            let b = mine_hard_negatives(&t, &cfg, &tx).unwrap();
            let codes_a: Vec<&str> = a.negatives.iter().map(|n| n.code.as_str()).collect();
            let codes_b: Vec<&str> = b.negatives.iter().map(|n| n.code.as_str()).collect();
            assert_eq!(codes_a, codes_b, "seed determinism for {target}");
            let unique: BTreeSet<&&str> = codes_a.iter().collect();
            assert_eq!(unique.len(), codes_a.len(), "duplicates for {target}");
            assert!(!codes_a.contains(&target), "target in own negatives");
        }
    }

    #[test]
    fn sibling_block_precedes_sampled_block() {
        let tx = fixture();
        let cfg = MiningConfig {
            n_negatives: 5,
            rng_seed: 3,
        };
        let set = mine_hard_negatives(&code("A0001"), &cfg, &tx).unwrap();
        let first_sampled = set
            .negatives
            .iter()
            .position(|n| n.provenance == Provenance::Sampled);
        if let Some(i) = first_sampled {
            assert!(set.negatives[i..]
                .iter()
                .all(|n| n.provenance == Provenance::Sampled));
        }
    }

    #[test]
    fn export_line_format() {
        let tx = fixture();
        let cfg = MiningConfig {
            n_negatives: 1,
            rng_seed: 42,
        };
        let set = mine_hard_negatives(&code("A0002"), &cfg, &tx).unwrap();
        let line = export_line(&set, &set.negatives[0]);
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], "A0002");
        assert!(fields[3].parse::<f64>().is_ok());
    }

    #[test]
    fn empirical_frequencies_track_distribution() {
        // Small-scale version of the sampling-fidelity acceptance check: single
        // sampled slot, frequencies vs exact probabilities.
        let tx = fixture();
        let t = code("A0001");
        let pool = vec![code("B0001"), code("B0002")];
        let dist = sampling_distribution(&t, &pool, &tx).unwrap();
        let cfg_for = |seed| MiningConfig {
            n_negatives: 3, // 2 siblings + 1 sampled
            rng_seed: seed,
        };
        let mut counts: BTreeMap<TermCode, usize> = BTreeMap::new();
        let runs = 20_000;
        for seed in 0..runs {
            let set = mine_hard_negatives(&t, &cfg_for(seed), &tx).unwrap();
            let sampled = set
                .negatives
                .iter()
                .find(|n| n.provenance == Provenance::Sampled)
                .unwrap();
            *counts.entry(sampled.code.clone()).or_default() += 1;
        }
        for (v, p) in &dist {
            let freq = counts.get(v).copied().unwrap_or(0) as f64 / runs as f64;
            assert!(
                (freq - p).abs() < 0.02,
                "{v}: freq {freq:.4} vs p {p:.4}"
            );
        }
    }
}
