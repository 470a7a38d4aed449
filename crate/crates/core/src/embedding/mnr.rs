//! Multiple-negatives ranking loss and its analytic gradient.
//!
//! Per batch item i with query q_i, positive d_i, and mined negatives H(q_i):
//!
//!   loss_i = log( e^{sim(q_i,d_i)} + Σ_{d_j ∈ H(q_i)} e^{sim(q_i,d_j)} ) − sim(q_i,d_i)
//!
//! with sim = scale · cosine, averaged over the batch. This equals softmax
//! cross-entropy with the positive as the target class, so with no negatives
//! the loss is exactly 0, and a negative tying the positive contributes log 2.
//! The log-sum-exp is max-shifted: large scales overflow the naive form.

use super::{cosine_parts, cosine_similarity, EmbeddingError, EmbeddingVector, ToyEmbedder};
use crate::embedding::SparseFeatures;

/// One training example: texts, not vectors, so the gradient can flow through
/// the embedder's feature map.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub query: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct MnrOptions {
    /// Multiplier on cosine before the softmax. The printed objective has no
    /// temperature, hence default 1.0; sharper values are standard practice.
    pub scale: f64,
    /// Also score the other in-batch positives as negatives for each query.
    /// Off by default: the objective sums only over the mined negative set.
    pub in_batch_negatives: bool,
}

impl Default for MnrOptions {
    fn default() -> Self {
        MnrOptions {
            scale: 1.0,
            in_batch_negatives: false,
        }
    }
}

pub(crate) fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Loss over pre-computed embeddings. `negatives[i]` lists the mined negatives
/// of query i; all three slices must have the same length B ≥ 1.
pub fn mnr_loss(
    queries: &[EmbeddingVector],
    positives: &[EmbeddingVector],
    negatives: &[Vec<EmbeddingVector>],
    opts: MnrOptions,
) -> Result<f64, EmbeddingError> {
    if queries.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    if queries.len() != positives.len() || queries.len() != negatives.len() {
        return Err(EmbeddingError::BatchShape {
            queries: queries.len(),
            positives: positives.len(),
            negative_lists: negatives.len(),
        });
    }
    let b = queries.len();
    let mut total = 0.0;
    for i in 0..b {
        let s_pos = opts.scale * cosine_similarity(&queries[i], &positives[i])?;
        let mut scores = vec![s_pos];
        for n in &negatives[i] {
            scores.push(opts.scale * cosine_similarity(&queries[i], n)?);
        }
        if opts.in_batch_negatives {
            for (j, p) in positives.iter().enumerate() {
                if j != i {
                    scores.push(opts.scale * cosine_similarity(&queries[i], p)?);
                }
            }
        }
        total += log_sum_exp(&scores) - s_pos;
    }
    Ok(total / b as f64)
}

/// Convenience: embeds a text batch with a toy embedder and evaluates the loss.
pub fn batch_loss(
    embedder: &ToyEmbedder,
    batch: &[Triplet],
    opts: MnrOptions,
) -> Result<f64, EmbeddingError> {
    Ok(batch_gradient_impl(embedder, batch, opts, false)?.loss)
}

#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    /// ∂loss/∂W, row-major d × f, same layout as [`ToyEmbedder::weights`].
    pub dw: Vec<f64>,
}

/// Loss and analytic gradient with respect to the embedder weights.
///
/// With a = W x_q and b = W x_c, the chain rule uses
/// ∂cos/∂a = (b̂ − cos·â)/‖a‖ (and symmetrically for b), weighted by the
/// softmax residuals: p_j for negatives, p_0 − 1 for the positive. Every
/// contribution is a rank-one update (d-vector ⊗ sparse features), accumulated
/// in a fixed order so results are exactly reproducible.
pub fn batch_gradient(
    embedder: &ToyEmbedder,
    batch: &[Triplet],
    opts: MnrOptions,
) -> Result<Gradient, EmbeddingError> {
    batch_gradient_impl(embedder, batch, opts, true)
}

struct Embedded {
    x: SparseFeatures,
    e: Vec<f64>,
    norm: f64,
}

fn batch_gradient_impl(
    embedder: &ToyEmbedder,
    batch: &[Triplet],
    opts: MnrOptions,
    want_grad: bool,
) -> Result<Gradient, EmbeddingError> {
    if batch.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    let d = embedder.dimension;
    let f = embedder.feature_count;
    let b = batch.len();
    let inv_b = 1.0 / b as f64;

    let embed = |text: &str| -> Result<Embedded, EmbeddingError> {
        let x = embedder.features(text);
        let e = embedder.project(&x);
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Embedded { x, e, norm })
    };

    let queries: Vec<Embedded> = batch.iter().map(|t| embed(&t.query)).collect::<Result<_, _>>()?;
    let positives: Vec<Embedded> =
        batch.iter().map(|t| embed(&t.positive)).collect::<Result<_, _>>()?;
    let negatives: Vec<Vec<Embedded>> = batch
        .iter()
        .map(|t| t.negatives.iter().map(|n| embed(n)).collect())
        .collect::<Result<_, _>>()?;

    let mut dw = vec![0.0; if want_grad { d * f } else { 0 }];
    let mut total_loss = 0.0;

    for i in 0..b {
        let q = &queries[i];
        let mut cands: Vec<&Embedded> = Vec::with_capacity(1 + negatives[i].len());
        cands.push(&positives[i]);
        cands.extend(negatives[i].iter());
        if opts.in_batch_negatives {
            for (j, p) in positives.iter().enumerate() {
                if j != i {
                    cands.push(p);
                }
            }
        }

        let mut cosines = Vec::with_capacity(cands.len());
        let mut scores = Vec::with_capacity(cands.len());
        for c in &cands {
            let (cos, _, _) = cosine_parts(&q.e, &c.e)?;
            cosines.push(cos);
            scores.push(opts.scale * cos);
        }
        total_loss += log_sum_exp(&scores) - scores[0];
        if !want_grad {
            continue;
        }

        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();

        let mut da = vec![0.0; d];
        let mut db = vec![0.0; d];
        for (j, c) in cands.iter().enumerate() {
            let mut weight = exps[j] / z;
            if j == 0 {
                weight -= 1.0;
            }
            let g = weight * opts.scale * inv_b;
            if g == 0.0 {
                continue;
            }
            let cos = cosines[j];
            for t in 0..d {
                let a_hat = q.e[t] / q.norm;
                let b_hat = c.e[t] / c.norm;
                da[t] += g * (b_hat - cos * a_hat) / q.norm;
                db[t] = g * (a_hat - cos * b_hat) / c.norm;
            }
            rank_one(&mut dw, &db, &c.x, f);
        }
        rank_one(&mut dw, &da, &q.x, f);
    }

    Ok(Gradient {
        loss: total_loss * inv_b,
        dw,
    })
}

/// dw += v ⊗ x over the sparse feature support.
fn rank_one(dw: &mut [f64], v: &[f64], x: &SparseFeatures, f: usize) {
    for (i, vi) in v.iter().enumerate() {
        if *vi == 0.0 {
            continue;
        }
        let row = &mut dw[i * f..(i + 1) * f];
        for &(j, c) in x {
            row[j] += vi * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingProvider;
    use crate::rng::{seeded_rng, standard_normal, uniform_usize};

    fn vecs(seed: u64, n: usize, dim: usize) -> Vec<EmbeddingVector> {
        let mut rng = seeded_rng(seed, "vecs");
        (0..n)
            .map(|_| EmbeddingVector((0..dim).map(|_| standard_normal(&mut rng)).collect()))
            .collect()
    }

    /// Straight-line transcription of the objective with no stabilization.
    fn naive_loss(
        queries: &[EmbeddingVector],
        positives: &[EmbeddingVector],
        negatives: &[Vec<EmbeddingVector>],
        scale: f64,
    ) -> f64 {
        let b = queries.len();
        let mut total = 0.0;
        for i in 0..b {
            let s_pos = scale * cosine_similarity(&queries[i], &positives[i]).unwrap();
            let mut denominator = s_pos.exp();
            for n in &negatives[i] {
                denominator += (scale * cosine_similarity(&queries[i], n).unwrap()).exp();
            }
            total += -(s_pos - denominator.ln());
        }
        total / b as f64
    }

    #[test]
    fn tied_positive_and_negative_is_log_two() {
        let q = vecs(1, 1, 8);
        let d = vecs(2, 1, 8);
        let negs = vec![vec![d[0].clone()]];
        let loss = mnr_loss(&q, &d, &negs, MnrOptions::default()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "{loss}");
        // Scale does not matter when the scores tie.
        let loss = mnr_loss(
            &q,
            &d,
            &negs,
            MnrOptions {
                scale: 17.0,
                ..MnrOptions::default()
            },
        )
        .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn no_negatives_means_zero_loss() {
        for seed in 0..5 {
            let q = vecs(seed, 4, 8);
            let d = vecs(seed + 100, 4, 8);
            let negs = vec![Vec::new(); 4];
            let loss = mnr_loss(&q, &d, &negs, MnrOptions::default()).unwrap();
            assert_eq!(loss, 0.0);
        }
    }

    #[test]
    fn matches_naive_oracle() {
        for seed in 0..20 {
            let q = vecs(seed, 4, 8);
            let d = vecs(seed + 100, 4, 8);
            let negs: Vec<Vec<EmbeddingVector>> =
                (0..4).map(|i| vecs(seed + 200 + i, 3, 8)).collect();
            for scale in [1.0, 5.0, 20.0] {
                let stable = mnr_loss(
                    &q,
                    &d,
                    &negs,
                    MnrOptions {
                        scale,
                        ..MnrOptions::default()
                    },
                )
                .unwrap();
                let naive = naive_loss(&q, &d, &negs, scale);
                assert!((stable - naive).abs() < 1e-9, "scale {scale}: {stable} vs {naive}");
            }
        }
    }

    #[test]
    fn loss_positive_with_any_negative() {
        for seed in 0..10 {
            let q = vecs(seed, 2, 8);
            let d = vecs(seed + 50, 2, 8);
            let negs: Vec<Vec<EmbeddingVector>> =
                (0..2).map(|i| vecs(seed + 99 + i, 1, 8)).collect();
            let loss = mnr_loss(&q, &d, &negs, MnrOptions::default()).unwrap();
            assert!(loss > 0.0);
        }
    }

    #[test]
    fn invariant_under_negative_permutation() {
        let q = vecs(3, 2, 8);
        let d = vecs(4, 2, 8);
        let negs: Vec<Vec<EmbeddingVector>> = (0..2).map(|i| vecs(30 + i, 4, 8)).collect();
        let reference = mnr_loss(&q, &d, &negs, MnrOptions::default()).unwrap();
        let mut rng = seeded_rng(9, "perm");
        for _ in 0..10 {
            let mut shuffled = negs.clone();
            for list in &mut shuffled {
                crate::rng::shuffle(&mut rng, list);
            }
            let loss = mnr_loss(&q, &d, &shuffled, MnrOptions::default()).unwrap();
            assert!((loss - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_positive_floor() {
        // Adding the positive itself as a negative forces at least log 2 per item.
        for seed in 0..10 {
            let q = vecs(seed, 3, 8);
            let d = vecs(seed + 77, 3, 8);
            let negs: Vec<Vec<EmbeddingVector>> = (0..3)
                .map(|i| {
                    let mut list = vecs(seed + 200 + i, 2, 8);
                    list.push(d[i as usize].clone());
                    list
                })
                .collect();
            let loss = mnr_loss(&q, &d, &negs, MnrOptions::default()).unwrap();
            assert!(loss >= std::f64::consts::LN_2 - 1e-12, "{loss}");
        }
    }

    #[test]
    fn in_batch_negatives_match_manual_expansion() {
        let q = vecs(6, 3, 8);
        let d = vecs(7, 3, 8);
        let negs: Vec<Vec<EmbeddingVector>> = (0..3).map(|i| vecs(60 + i, 2, 8)).collect();
        let with_flag = mnr_loss(
            &q,
            &d,
            &negs,
            MnrOptions {
                scale: 1.0,
                in_batch_negatives: true,
            },
        )
        .unwrap();
        // Manual expansion: fold the other positives into each negative list.
        let expanded: Vec<Vec<EmbeddingVector>> = (0..3)
            .map(|i| {
                let mut list = negs[i].clone();
                for (j, p) in d.iter().enumerate() {
                    if j != i {
                        list.push(p.clone());
                    }
                }
                list
            })
            .collect();
        let manual = mnr_loss(&q, &d, &expanded, MnrOptions::default()).unwrap();
        assert!((with_flag - manual).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let q = vecs(1, 2, 8);
        let d = vecs(2, 1, 8);
        assert!(matches!(
            mnr_loss(&q, &d, &[Vec::new(), Vec::new()], MnrOptions::default()),
            Err(EmbeddingError::BatchShape { .. })
        ));
        assert!(matches!(
            mnr_loss(&[], &[], &[], MnrOptions::default()),
            Err(EmbeddingError::EmptyInput)
        ));
    }

    fn toy_batch(seed: u64, items: usize, negs: usize) -> Vec<Triplet> {
        let words = [
            "milk", "sugar", "grape", "boiled", "raw", "cow", "goat", "juice", "bread", "salt",
        ];
        let mut rng = seeded_rng(seed, "texts");
        let mut text = |n: usize| -> String {
            (0..n)
                .map(|_| words[uniform_usize(&mut rng, words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        (0..items)
            .map(|_| Triplet {
                query: text(3),
                positive: text(4),
                negatives: (0..negs).map(|_| text(4)).collect(),
            })
            .collect()
    }

    #[test]
    fn batch_loss_agrees_with_vector_level_loss() {
        let embedder = ToyEmbedder::random(8, 64, 42, 5);
        let batch = toy_batch(11, 4, 3);
        let via_batch = batch_loss(&embedder, &batch, MnrOptions::default()).unwrap();

        let embed_all = |texts: &[&str]| embedder.embed(texts).unwrap();
        let q: Vec<EmbeddingVector> =
            embed_all(&batch.iter().map(|t| t.query.as_str()).collect::<Vec<_>>());
        let d: Vec<EmbeddingVector> =
            embed_all(&batch.iter().map(|t| t.positive.as_str()).collect::<Vec<_>>());
        let negs: Vec<Vec<EmbeddingVector>> = batch
            .iter()
            .map(|t| embed_all(&t.negatives.iter().map(String::as_str).collect::<Vec<_>>()))
            .collect();
        let via_vectors = mnr_loss(&q, &d, &negs, MnrOptions::default()).unwrap();
        assert!((via_batch - via_vectors).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_without_negatives() {
        let embedder = ToyEmbedder::random(4, 32, 42, 5);
        let batch: Vec<Triplet> = toy_batch(12, 3, 0);
        let g = batch_gradient(&embedder, &batch, MnrOptions::default()).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.dw.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        // Small inline version of the full acceptance check.
        let opts = MnrOptions {
            scale: 4.0,
            ..MnrOptions::default()
        };
        for seed in 0..3 {
            let embedder = ToyEmbedder::random(4, 32, 42, 100 + seed);
            let batch = toy_batch(20 + seed, 2, 2);
            let analytic = batch_gradient(&embedder, &batch, opts).unwrap();
            let h = 1e-5;
            for k in 0..embedder.weights().len() {
                let mut plus = embedder.clone();
                plus.weights[k] += h;
                let mut minus = embedder.clone();
                minus.weights[k] -= h;
                let fd = (batch_loss(&plus, &batch, opts).unwrap()
                    - batch_loss(&minus, &batch, opts).unwrap())
                    / (2.0 * h);
                let g = analytic.dw[k];
                if g.abs() < 1e-8 && fd.abs() < 1e-8 {
                    continue;
                }
                let rel = (g - fd).abs() / g.abs().max(fd.abs());
                assert!(rel < 1e-4, "weight {k}: analytic {g} vs fd {fd} (rel {rel})");
            }
        }
    }

    #[test]
    fn gradient_with_in_batch_negatives_matches_fd() {
        let opts = MnrOptions {
            scale: 2.0,
            in_batch_negatives: true,
        };
        let embedder = ToyEmbedder::random(3, 16, 42, 9);
        let batch = toy_batch(31, 3, 1);
        let analytic = batch_gradient(&embedder, &batch, opts).unwrap();
        let h = 1e-5;
        for k in 0..embedder.weights().len() {
            let mut plus = embedder.clone();
            plus.weights[k] += h;
            let mut minus = embedder.clone();
            minus.weights[k] -= h;
            let fd =
                (batch_loss(&plus, &batch, opts).unwrap() - batch_loss(&minus, &batch, opts).unwrap())
                    / (2.0 * h);
            let g = analytic.dw[k];
            if g.abs() < 1e-8 && fd.abs() < 1e-8 {
                continue;
            }
            let rel = (g - fd).abs() / g.abs().max(fd.abs());
            assert!(rel < 1e-4, "weight {k}: analytic {g} vs fd {fd} (rel {rel})");
        }
    }
}
