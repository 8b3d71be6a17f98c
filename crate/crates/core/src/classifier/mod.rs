//! MLP head over the fused vector, class-weighted cross-entropy, the
//! end-to-end model, its training loop and checkpoints.

mod checkpoint;
mod model;
mod train;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DiscourseLabel;
use crate::error::{Error, Result};
use crate::fusion::FusionOutput;
use crate::nn::{prefixed, softmax, Linear, Matrix, Parameters};

pub use checkpoint::{Checkpoint, CHECKPOINT_FILE, CHECKPOINT_FORMAT};
pub use model::{DiscourseModel, EncodedPost, ModelConfig, Modalities};
pub use train::{evaluate_posts, predict_labels, train, EpochRecord, TrainConfig, TrainOutcome};

pub const N_LABELS: usize = DiscourseLabel::COUNT;

pub type Probs = [f64; N_LABELS];

/// One hidden `tanh` layer of width `d`, then five logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    input: Matrix,
    activation: Matrix,
}

impl ClassifierHead {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_hidden: usize) -> Self {
        ClassifierHead {
            hidden: Linear::xavier(rng, d_in, d_hidden),
            output: Linear::xavier(rng, d_hidden, N_LABELS),
        }
    }

    pub fn zeros(d_in: usize, d_hidden: usize) -> Self {
        ClassifierHead {
            hidden: Linear::zeros(d_in, d_hidden),
            output: Linear::zeros(d_hidden, N_LABELS),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ClassifierHead::zeros(self.d_in(), self.hidden.d_out())
    }

    pub fn d_in(&self) -> usize {
        self.hidden.d_in()
    }

    pub(crate) fn logits(&self, fused: ArrayView1<f64>) -> Result<(Probs, HeadCache)> {
        if fused.len() != self.d_in() {
            return Err(Error::Shape(format!(
                "fused vector has length {}, head expects {}",
                fused.len(),
                self.d_in()
            )));
        }
        let input = fused.to_owned().insert_axis(Axis(0));
        let activation = self.hidden.forward(input.view()).mapv(f64::tanh);
        let z = self.output.forward(activation.view());
        let mut logits = [0.0; N_LABELS];
        logits.iter_mut().zip(z.iter()).for_each(|(l, v)| *l = *v);
        Ok((logits, HeadCache { input, activation }))
    }

    pub fn probabilities(&self, fused: ArrayView1<f64>) -> Result<Probs> {
        let (logits, _) = self.logits(fused)?;
        Ok(to_probs(&logits))
    }

    /// Returns `dL/d fused` and accumulates parameter gradients.
    pub(crate) fn backward(&self, cache: &HeadCache, d_logits: &Probs, grad: &mut ClassifierHead) -> Matrix {
        let d_z = Array2::from_shape_vec((1, N_LABELS), d_logits.to_vec()).expect("1 x 5");
        let d_act = self.output.backward(cache.activation.view(), d_z.view(), &mut grad.output);
        let d_pre = d_act * cache.activation.mapv(|a| 1.0 - a * a);
        self.hidden.backward(cache.input.view(), d_pre.view(), &mut grad.hidden)
    }
}

impl Parameters for ClassifierHead {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out = prefixed("hidden", self.hidden.params());
        out.extend(prefixed("output", self.output.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.hidden.params_mut();
        out.extend(self.output.params_mut());
        out
    }
}

pub(crate) fn to_probs(logits: &Probs) -> Probs {
    let p = softmax(logits);
    let mut out = [0.0; N_LABELS];
    out.copy_from_slice(&p);
    out
}

pub fn argmax(probs: &Probs) -> DiscourseLabel {
    let code = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if *p > probs[best] { i } else { best });
    DiscourseLabel::from_code(code).expect("five labels")
}

/// Label distribution of the fused vector.
pub fn predict(fused: &FusionOutput, head: &ClassifierHead) -> Result<Probs> {
    head.probabilities(fused.fused.view())
}

/// Per-label loss weights, indexed by label code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; N_LABELS]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; N_LABELS])
    }

    pub fn get(&self, label: DiscourseLabel) -> f64 {
        self.0[label.code()]
    }
}

/// Inverse-frequency weights `w_c = N / (K * N_c)`, so a balanced corpus
/// gets all ones.
pub fn class_weights(counts: &BTreeMap<DiscourseLabel, usize>) -> Result<ClassWeights> {
    let total: usize = DiscourseLabel::ALL
        .iter()
        .map(|l| counts.get(l).copied().unwrap_or(0))
        .sum();
    let mut w = [0.0; N_LABELS];
    for label in DiscourseLabel::ALL {
        let n = counts.get(&label).copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::ZeroCount(label.name()));
        }
        w[label.code()] = total as f64 / (N_LABELS as f64 * n as f64);
    }
    Ok(ClassWeights(w))
}

pub fn label_counts<'a>(labels: impl IntoIterator<Item = &'a DiscourseLabel>) -> BTreeMap<DiscourseLabel, usize> {
    let mut counts: BTreeMap<DiscourseLabel, usize> = DiscourseLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for l in labels {
        *counts.get_mut(l).unwrap() += 1;
    }
    counts
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Weighted cross-entropy normalised by the total weight of the batch:
/// `sum_i w_{y_i} * -ln p_i[y_i] / sum_i w_{y_i}`.
pub fn loss(probs: &[Probs], labels: &[DiscourseLabel], weights: &ClassWeights) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, &y) in probs.iter().zip(labels) {
        let w = weights.get(y);
        num += w * -p[y.code()].max(PROB_FLOOR).ln();
        den += w;
    }
    Ok(num / den)
}
