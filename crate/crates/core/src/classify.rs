//! Facet category assignment: decide which of the 28 categories apply to an
//! input description.
//!
//! Three interchangeable score sources feed one thresholding rule:
//! a remote classifier (production), a bi-encoder similarity head refined by a
//! small MLP, and a locally trainable linear multi-label model over the shared
//! hashed feature space. A category is assigned when sigmoid(logit) >= tau.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::embedding::features::hashed_features;
use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider};
use crate::taxonomy::{FacetCategoryId, HierarchyId, Taxonomy, TaxonomyError, TermCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreProvenance {
    Remote,
    Biencoder,
    Linear,
}

/// Raw per-category logits in catalog order (F01 first). Always length 28;
/// categories missing from a reduced catalog carry -inf and can never pass
/// the threshold.
#[derive(Debug, Clone)]
pub struct CategoryScores {
    logits: Vec<f64>,
    pub provenance: ScoreProvenance,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("threshold {0} must lie strictly inside (0,1)")]
    BadThreshold(f64),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("remote classifier unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file line {line}: {reason}")]
    BadModelFile { line: usize, reason: String },
}

impl CategoryScores {
    pub fn new(logits: Vec<f64>, provenance: ScoreProvenance) -> Result<Self, ClassifyError> {
        if logits.len() != FacetCategoryId::COUNT {
            return Err(ClassifyError::WrongLength {
                expected: FacetCategoryId::COUNT,
                got: logits.len(),
            });
        }
        Ok(CategoryScores { logits, provenance })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logit(&self, id: FacetCategoryId) -> f64 {
        self.logits[id.index()]
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Assigns every category whose sigmoid score clears `tau`. The result is
/// monotone in `tau` by set inclusion: lowering the threshold only adds.
pub fn threshold_classify(
    scores: &CategoryScores,
    tau: f64,
) -> Result<BTreeSet<FacetCategoryId>, ClassifyError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ClassifyError::BadThreshold(tau));
    }
    Ok(scores
        .logits
        .iter()
        .enumerate()
        .filter(|(_, z)| sigmoid(**z) >= tau)
        .map(|(i, _)| FacetCategoryId::from_index(i).expect("logits are registry-sized"))
        .collect())
}

/// Anything that maps an input text to per-category logits.
pub trait CategoryScorer: Send + Sync {
    fn scorer_id(&self) -> String;
    fn score_text(&self, text: &str) -> Result<CategoryScores, ClassifyError>;
}

/// One-hidden-layer refinement head for the bi-encoder path:
/// n -> 2n (ReLU) -> n. `identity(n)` initializes W1 = [I; -I], W2 = [I, -I],
/// which reproduces its input exactly (relu(x) - relu(-x) = x).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Mlp {
    pub fn identity(input: usize) -> Mlp {
        let mut w1 = vec![0.0; 2 * input * input];
        let mut w2 = vec![0.0; input * 2 * input];
        for i in 0..input {
            w1[i * input + i] = 1.0;
            w1[(input + i) * input + i] = -1.0;
            w2[i * 2 * input + i] = 1.0;
            w2[i * 2 * input + input + i] = -1.0;
        }
        Mlp {
            input,
            w1,
            b1: vec![0.0; 2 * input],
            w2,
            b2: vec![0.0; input],
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ClassifyError> {
        if x.len() != self.input {
            return Err(ClassifyError::WrongLength {
                expected: self.input,
                got: x.len(),
            });
        }
        let n = self.input;
        let hidden: Vec<f64> = (0..2 * n)
            .map(|r| {
                let z: f64 = self.b1[r]
                    + x.iter()
                        .enumerate()
                        .map(|(c, v)| self.w1[r * n + c] * v)
                        .sum::<f64>();
                z.max(0.0)
            })
            .collect();
        Ok((0..n)
            .map(|r| {
                self.b2[r]
                    + hidden
                        .iter()
                        .enumerate()
                        .map(|(c, v)| self.w2[r * 2 * n + c] * v)
                        .sum::<f64>()
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifyError> {
        let mut out = format!("mlp v1\nshape {}\n", self.input);
        for row in [&self.w1, &self.b1, &self.w2, &self.b2] {
            let rendered: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&rendered.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mlp, ClassifyError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, reason: &str| ClassifyError::BadModelFile {
            line,
            reason: reason.to_owned(),
        };
        let mut lines = text.lines();
        if lines.next() != Some("mlp v1") {
            return Err(bad(1, "expected header `mlp v1`"));
        }
        let input: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("shape "))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(2, "expected `shape N`"))?;
        let mut rows = Vec::with_capacity(4);
        for (i, expected_len) in [2 * input * input, 2 * input, 2 * input * input, input]
            .into_iter()
            .enumerate()
        {
            let line_no = 3 + i;
            let row: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad(line_no, "missing weight row"))?
                .split(' ')
                .map(|v| v.parse().map_err(|_| bad(line_no, "bad float")))
                .collect::<Result<_, _>>()?;
            if row.len() != expected_len {
                return Err(bad(line_no, "wrong number of values"));
            }
            rows.push(row);
        }
        let [w1, b1, w2, b2] = rows.try_into().expect("exactly four rows read");
        Ok(Mlp { input, w1, b1, w2, b2 })
    }
}

/// Task II bi-encoder variant: embed the input concatenated with its base
/// term, compare against each category description, refine the similarity
/// vector with the MLP, threshold. Categories absent from the catalog are
/// masked to -inf so they can never be assigned.
pub fn biencoder_classify(
    input_text: &str,
    base_term: &TermCode,
    tx: &Taxonomy,
    provider: &dyn EmbeddingProvider,
    mlp: &Mlp,
    tau: f64,
) -> Result<(BTreeSet<FacetCategoryId>, CategoryScores), ClassifyError> {
    let base = tx.node(base_term)?;
    let text = concat_with_base(input_text, &base.name);

    let mut texts = vec![text];
    let mut present = Vec::new();
    for cat in tx.categories() {
        let h = tx
            .hierarchy(HierarchyId::Facet(cat.id))
            .expect("registry entries have hierarchies");
        let root = h.root();
        texts.push(h.context_text(&root.code).expect("root is in its hierarchy"));
        present.push(cat.id);
    }
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let embedded = provider.embed(&text_refs)?;

    let mut sims = vec![0.0; FacetCategoryId::COUNT];
    for (cat, e) in present.iter().zip(&embedded[1..]) {
        sims[cat.index()] = cosine_similarity(&embedded[0], e)?;
    }
    let mut logits = mlp.forward(&sims)?;
    if logits.len() != FacetCategoryId::COUNT {
        return Err(ClassifyError::WrongLength {
            expected: FacetCategoryId::COUNT,
            got: logits.len(),
        });
    }
    for id in FacetCategoryId::all() {
        if !present.contains(&id) {
            logits[id.index()] = f64::NEG_INFINITY;
        }
    }
    let scores = CategoryScores::new(logits, ScoreProvenance::Biencoder)?;
    let assigned = threshold_classify(&scores, tau)?;
    Ok((assigned, scores))
}

/// The join used wherever an input is paired with its predicted base term.
pub fn concat_with_base(input_text: &str, base_term_name: &str) -> String {
    format!("{input_text} [BASETERM] {base_term_name}")
}

/// Linear multi-label classifier over the hashed feature space. Small enough
/// to train in tests; stands in for the production transformer classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMultiLabel {
    /// 28 x feature_count, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    feature_count: usize,
    hash_seed: u64,
    seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub feature_count: usize,
    pub hash_seed: u64,
}

impl Default for LinearTrainConfig {
    fn default() -> Self {
        LinearTrainConfig {
            epochs: 200,
            learning_rate: 0.5,
            seed: 42,
            feature_count: 1024,
            hash_seed: 42,
        }
    }
}

impl LinearMultiLabel {
    pub fn zeros(feature_count: usize, hash_seed: u64, seed: u64) -> LinearMultiLabel {
        LinearMultiLabel {
            weights: vec![0.0; FacetCategoryId::COUNT * feature_count],
            bias: vec![0.0; FacetCategoryId::COUNT],
            feature_count,
            hash_seed,
            seed,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    fn logits_of_features(&self, features: &[(usize, f64)]) -> Vec<f64> {
        (0..FacetCategoryId::COUNT)
            .map(|k| {
                self.bias[k]
                    + features
                        .iter()
                        .map(|(i, v)| self.weights[k * self.feature_count + i] * v)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn score(&self, text: &str) -> CategoryScores {
        let features = hashed_features(text, self.feature_count, self.hash_seed);
        CategoryScores {
            logits: self.logits_of_features(&features),
            provenance: ScoreProvenance::Linear,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifyError> {
        let mut out = format!(
            "linear-multilabel v1\nshape {} {} hash_seed {} seed {}\n",
            FacetCategoryId::COUNT,
            self.feature_count,
            self.hash_seed,
            self.seed
        );
        let bias: Vec<String> = self.bias.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&bias.join(" "));
        out.push('\n');
        for k in 0..FacetCategoryId::COUNT {
            let row = &self.weights[k * self.feature_count..(k + 1) * self.feature_count];
            let rendered: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&rendered.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LinearMultiLabel, ClassifyError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, reason: &str| ClassifyError::BadModelFile {
            line,
            reason: reason.to_owned(),
        };
        let mut lines = text.lines();
        if lines.next() != Some("linear-multilabel v1") {
            return Err(bad(1, "expected header `linear-multilabel v1`"));
        }
        let shape = lines.next().ok_or_else(|| bad(2, "missing shape line"))?;
        let parts: Vec<&str> = shape.split(' ').collect();
        let ["shape", rows, features, "hash_seed", hash_seed, "seed", seed] = parts.as_slice()
        else {
            return Err(bad(2, "expected `shape R F hash_seed H seed S`"));
        };
        if rows.parse::<usize>() != Ok(FacetCategoryId::COUNT) {
            return Err(bad(2, "row count must be 28"));
        }
        let feature_count: usize = features.parse().map_err(|_| bad(2, "bad feature count"))?;
        let hash_seed: u64 = hash_seed.parse().map_err(|_| bad(2, "bad hash seed"))?;
        let seed: u64 = seed.parse().map_err(|_| bad(2, "bad seed"))?;

        let parse_row = |line: Option<&str>, line_no: usize, len: usize| -> Result<Vec<f64>, ClassifyError> {
            let row: Vec<f64> = line
                .ok_or_else(|| bad(line_no, "missing row"))?
                .split(' ')
                .map(|v| v.parse().map_err(|_| bad(line_no, "bad float")))
                .collect::<Result<_, _>>()?;
            if row.len() != len {
                return Err(bad(line_no, "wrong number of values"));
            }
            Ok(row)
        };
        let bias = parse_row(lines.next(), 3, FacetCategoryId::COUNT)?;
        let mut weights = Vec::with_capacity(FacetCategoryId::COUNT * feature_count);
        for k in 0..FacetCategoryId::COUNT {
            weights.extend(parse_row(lines.next(), 4 + k, feature_count)?);
        }
        Ok(LinearMultiLabel {
            weights,
            bias,
            feature_count,
            hash_seed,
            seed,
        })
    }
}

impl CategoryScorer for LinearMultiLabel {
    fn scorer_id(&self) -> String {
        format!("linear:f{}:h{}:s{}", self.feature_count, self.hash_seed, self.seed)
    }

    fn score_text(&self, text: &str) -> Result<CategoryScores, ClassifyError> {
        Ok(self.score(text))
    }
}

/// Mean binary cross-entropy over items and labels, with its gradient.
/// Stable form: bce(z, y) = max(z, 0) - y z + ln(1 + exp(-|z|)).
fn bce_loss_and_grad(
    model: &LinearMultiLabel,
    features: &[Vec<(usize, f64)>],
    targets: &[Vec<bool>],
) -> (f64, Vec<f64>, Vec<f64>) {
    let f = model.feature_count;
    let scale = 1.0 / (features.len() * FacetCategoryId::COUNT) as f64;
    let mut loss = 0.0;
    let mut dw = vec![0.0; FacetCategoryId::COUNT * f];
    let mut db = vec![0.0; FacetCategoryId::COUNT];
    for (x, ys) in features.iter().zip(targets) {
        let logits = model.logits_of_features(x);
        for (k, (&z, &hit)) in logits.iter().zip(ys).enumerate() {
            let y = f64::from(hit);
            loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
            let g = (sigmoid(z) - y) * scale;
            db[k] += g;
            for &(i, v) in x {
                dw[k * f + i] += g * v;
            }
        }
    }
    (loss * scale, dw, db)
}

/// Full-batch gradient descent on BCE from zero weights. Returns the model
/// and the per-epoch mean loss curve (the last entry is the final loss, so
/// the curve has epochs + 1 points).
pub fn train_linear_multilabel(
    data: &[(String, BTreeSet<FacetCategoryId>)],
    cfg: &LinearTrainConfig,
) -> Result<(LinearMultiLabel, Vec<f64>), ClassifyError> {
    if data.is_empty() {
        return Err(ClassifyError::EmptyDataset);
    }
    let mut model = LinearMultiLabel::zeros(cfg.feature_count, cfg.hash_seed, cfg.seed);
    let features: Vec<Vec<(usize, f64)>> = data
        .iter()
        .map(|(text, _)| hashed_features(text, cfg.feature_count, cfg.hash_seed))
        .collect();
    let targets: Vec<Vec<bool>> = data
        .iter()
        .map(|(_, cats)| FacetCategoryId::all().map(|id| cats.contains(&id)).collect())
        .collect();

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, dw, db) = bce_loss_and_grad(&model, &features, &targets);
        if !loss.is_finite() {
            return Err(ClassifyError::NonFiniteLoss { epoch });
        }
        losses.push(loss);
        for (w, g) in model.weights.iter_mut().zip(&dw) {
            *w -= cfg.learning_rate * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&db) {
            *b -= cfg.learning_rate * g;
        }
    }
    let (final_loss, _, _) = bce_loss_and_grad(&model, &features, &targets);
    if !final_loss.is_finite() {
        return Err(ClassifyError::NonFiniteLoss { epoch: cfg.epochs });
    }
    losses.push(final_loss);
    Ok((model, losses))
}
