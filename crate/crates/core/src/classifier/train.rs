use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, class_weights, label_counts, ClassWeights, DiscourseModel, EncodedPost};
use crate::corpus::DiscourseLabel;
use crate::error::{Error, Result};
use crate::evaluation::{f1_report, EvalReport};
use crate::nn::{Adam, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Taken from the training split's label counts when unset.
    pub class_weights: Option<ClassWeights>,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            learning_rate: 5e-5,
            max_epochs: 20,
            seed: 1,
            class_weights: None,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
    pub val_per_class_f1: [f64; 5],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation weighted F1.
    pub model: DiscourseModel,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub class_weights: ClassWeights,
}

pub fn predict_labels(model: &DiscourseModel, posts: &[EncodedPost]) -> Result<Vec<DiscourseLabel>> {
    posts
        .par_iter()
        .map(|p| model.forward(p).map(|(_, probs)| argmax(&probs)))
        .collect()
}

pub fn evaluate_posts(model: &DiscourseModel, posts: &[EncodedPost]) -> Result<EvalReport> {
    let preds = predict_labels(model, posts)?;
    let truths: Vec<DiscourseLabel> = posts
        .iter()
        .map(|p| p.label.ok_or_else(|| Error::MissingLabel(p.id.clone())))
        .collect::<Result<_>>()?;
    f1_report(&preds, &truths)
}

/// Mini-batch Adam on the class-weighted loss. Per-post gradients are
/// computed in parallel and summed in batch order, so runs are reproducible
/// for a fixed seed.
pub fn train(
    mut model: DiscourseModel,
    train_set: &[EncodedPost],
    val_set: &[EncodedPost],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let labels: Vec<DiscourseLabel> = train_set
        .iter()
        .map(|p| p.label.ok_or_else(|| Error::MissingLabel(p.id.clone())))
        .collect::<Result<_>>()?;
    let weights = match cfg.class_weights {
        Some(w) => w,
        None => class_weights(&label_counts(&labels))?,
    };
    if weights.0.iter().any(|w| w.is_nan() || *w <= 0.0) {
        return Err(Error::Config("class weights must be strictly positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, DiscourseModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let total_w: f64 = batch.iter().map(|&i| weights.get(labels[i])).sum();
            let parts = batch
                .par_iter()
                .map(|&i| model.loss_and_grad(&train_set[i], weights.get(labels[i]) / total_w))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = model.zeros_like();
            let mut batch_loss = 0.0;
            for (l, g) in &parts {
                batch_loss += l;
                grad.add_assign(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch_ids: batch.iter().map(|&i| train_set[i].id.clone()).collect(),
                    param_norm: model.l2_norm(),
                });
            }
            opt.step(&mut model, &grad);
            epoch_loss += batch_loss;
            batches += 1;
        }

        let report = evaluate_posts(&model, val_set)?;
        log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_weighted_f1: report.weighted_f1,
            val_per_class_f1: report.per_class_array(),
        });
        let improved = best.as_ref().is_none_or(|(f1, _, _)| report.weighted_f1 > *f1);
        if improved {
            best = Some((report.weighted_f1, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                break;
            }
        }
    }

    let (_, best_epoch, best_model) = match best {
        Some(b) => b,
        None => (0.0, 0, model),
    };
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        log,
        class_weights: weights,
    })
}
