use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClassWeights, DiscourseModel, ModelConfig, TrainConfig};
use crate::corpus::DiscourseLabel;
use crate::error::{Error, Result};
use crate::nn::Parameters;

pub const CHECKPOINT_FORMAT: &str = "discourse-checkpoint/1";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Self-describing model archive: configuration, label-code mapping, split
/// seed and every parameter tensor by name. Floats are written in
/// shortest round-trip form, so save followed by load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub text_backend: String,
    pub image_backend: String,
    pub labels: Vec<String>,
    pub split_seed: Option<u64>,
    pub best_epoch: usize,
    pub class_weights: ClassWeights,
    params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &DiscourseModel,
        train_config: &TrainConfig,
        text_backend: &str,
        image_backend: &str,
        split_seed: Option<u64>,
        best_epoch: usize,
        class_weights: ClassWeights,
    ) -> Self {
        let params = model
            .params()
            .into_iter()
            .map(|(name, p)| {
                let rec = TensorRecord {
                    rows: p.nrows(),
                    cols: p.ncols(),
                    data: p.iter().copied().collect(),
                };
                (name, rec)
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            text_backend: text_backend.into(),
            image_backend: image_backend.into(),
            labels: DiscourseLabel::ALL.iter().map(|l| l.name().to_string()).collect(),
            split_seed,
            best_epoch,
            class_weights,
            params,
        }
    }

    pub fn labels_match(&self) -> bool {
        self.labels.len() == DiscourseLabel::COUNT
            && self
                .labels
                .iter()
                .zip(DiscourseLabel::ALL)
                .all(|(a, b)| a == b.name())
    }

    /// Rebuilds the model, checking every tensor name and shape.
    pub fn model(&self) -> Result<DiscourseModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format '{}'", self.format)));
        }
        if !self.labels_match() {
            return Err(Error::Checkpoint(format!(
                "label mapping {:?} does not match this build's labels",
                self.labels
            )));
        }
        let mut model = DiscourseModel::new(self.model_config.clone(), 0)?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                self.params.len()
            )));
        }
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let rec = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
            if (rec.rows, rec.cols) != slot.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' is {}x{}, expected {:?}",
                    rec.rows,
                    rec.cols,
                    slot.dim()
                )));
            }
            *slot = Array2::from_shape_vec((rec.rows, rec.cols), rec.data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CHECKPOINT_FILE);
        fs::write(&path, serde_json::to_vec(self)?).map_err(|e| Error::io(&path, e))
    }

    /// Accepts either the checkpoint directory or the file itself.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(CHECKPOINT_FILE)
        } else {
            path.to_path_buf()
        };
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
