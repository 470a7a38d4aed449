//! AdamW training loop for the toy embedder.

use super::mnr::{batch_gradient, batch_loss, MnrOptions, Triplet};
use super::{EmbeddingError, ToyEmbedder};
use crate::rng::{seeded_rng, uniform_usize};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    /// Items drawn per step, uniformly with replacement.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mnr: MnrOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 16,
            learning_rate: 0.05,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            mnr: MnrOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Loss over the full training set before the first step.
    pub initial_loss: f64,
    /// Loss over the full training set after the last step.
    pub final_loss: f64,
    /// Batch loss at each step, evaluated before that step's update.
    pub step_losses: Vec<f64>,
}

/// Runs `cfg.steps` AdamW updates starting from `initial`. Fully deterministic
/// for a fixed seed: batch selection uses its own derived RNG stream and the
/// update loop is single-threaded. Aborts with the offending step index the
/// moment the loss stops being finite.
pub fn train_toy_embedder(
    initial: &ToyEmbedder,
    data: &[Triplet],
    cfg: &TrainConfig,
) -> Result<(ToyEmbedder, TrainReport), EmbeddingError> {
    if data.is_empty() {
        return Err(EmbeddingError::EmptyInput);
    }
    let mut model = initial.clone();
    let initial_loss = batch_loss(&model, data, cfg.mnr)?;

    let n = model.weights.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut rng = seeded_rng(cfg.seed, "batch");
    let mut step_losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let batch: Vec<Triplet> = (0..cfg.batch_size.max(1))
            .map(|_| data[uniform_usize(&mut rng, data.len())].clone())
            .collect();
        let grad = batch_gradient(&model, &batch, cfg.mnr)?;
        if !grad.loss.is_finite() {
            return Err(EmbeddingError::NonFiniteLoss { step });
        }
        step_losses.push(grad.loss);

        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for k in 0..n {
            let g = grad.dw[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            model.weights[k] -= cfg.learning_rate
                * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * model.weights[k]);
        }
    }

    let final_loss = batch_loss(&model, data, cfg.mnr)?;
    if !final_loss.is_finite() {
        return Err(EmbeddingError::NonFiniteLoss { step: cfg.steps });
    }
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            step_losses,
        },
    ))
}
