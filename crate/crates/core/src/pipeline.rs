//! Glue from a loaded dataset and a [`RunConfig`] to encoded posts and a
//! trained, evaluated model. The CLI and the ablation runner share this
//! path so an ablation cell and a plain run behave identically.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    predict_labels, train, DiscourseModel, EncodedPost, ModelConfig, TrainOutcome,
};
use crate::config::RunConfig;
use crate::corpus::{Dataset, DatasetSplit, DiscourseLabel};
use crate::encoders::{
    CaptionFeatures, CaptionSource, EncoderBackend, ImageBackbone, ImageEncoder, TextEncoder,
};
use crate::error::{Error, Result};
use crate::evaluation::{f1_report, EvalReport};

/// Frozen encoders plus the caption source, built once per run.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub text: TextEncoder,
    pub caption: TextEncoder,
    pub image: ImageEncoder,
    pub caption_source: String,
    pub use_caption: bool,
}

impl FeatureExtractor {
    pub fn new(model: &ModelConfig, text_backend: &str, image_backend: &str, caption_source: &str, memory_cap: usize) -> Result<Self> {
        let text_backend: EncoderBackend = text_backend.parse()?;
        let image_backend: EncoderBackend = image_backend.parse()?;
        Ok(FeatureExtractor {
            text: TextEncoder::new(text_backend.clone(), model.dim, model.text_cap),
            caption: TextEncoder::new(text_backend, model.dim, model.caption_cap),
            image: ImageEncoder::new(
                ImageBackbone::new(image_backend, model.image_channels),
                model.grid,
                memory_cap,
            ),
            caption_source: caption_source.to_string(),
            use_caption: model.modalities.caption,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::new(&cfg.model, &cfg.text_backend, &cfg.image_backend, &cfg.caption_source, cfg.memory_cap)
    }

    /// Encodes the listed posts in the given order. Inline captions win
    /// over the configured source; the source is only opened when some
    /// post lacks one.
    pub fn encode(&self, dataset: &Dataset, ids: &[String]) -> Result<Vec<EncodedPost>> {
        let index = dataset.index();
        let posts = ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::UnknownId(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let needs_source = self.use_caption && posts.iter().any(|p| p.caption.as_deref().is_none_or(|c| c.trim().is_empty()));
        let source = if needs_source {
            Some(CaptionSource::from_spec(&self.caption_source, &dataset.root).map_err(|e| match e {
                Error::Io { path, .. } => Error::CaptionsUnavailable(path.display().to_string()),
                other => other,
            })?)
        } else {
            None
        };

        posts
            .par_iter()
            .map(|post| {
                let image_path = dataset.image_path(post);
                let text = self.text.encode_text(&post.text)?;
                let image = self.image.regions(&image_path)?;
                let caption = if !self.use_caption {
                    CaptionFeatures::zeros(1, self.caption.dim)
                } else {
                    let inline = post.caption.as_deref().filter(|c| !c.trim().is_empty());
                    let caption = match (inline, &source) {
                        (Some(c), _) => c.to_string(),
                        (None, Some(src)) => src.caption_image(&post.id, &image_path)?,
                        (None, None) => return Err(Error::MissingCaption(post.id.clone())),
                    };
                    self.caption.encode_caption(&caption)?
                };
                Ok(EncodedPost {
                    id: post.id.clone(),
                    label: post.label,
                    text,
                    image,
                    caption,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: DiscourseLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<DiscourseLabel>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub outcome: TrainOutcome,
    pub test_report: EvalReport,
    pub test_predictions: Vec<Prediction>,
}

/// Checks that every split id exists and that the three parts are disjoint.
pub fn check_split(dataset: &Dataset, split: &DatasetSplit) -> Result<()> {
    let mut seen = HashSet::new();
    for id in split.train.iter().chain(&split.validation).chain(&split.test) {
        if dataset.get(id).is_none() {
            return Err(Error::UnknownId(id.clone()));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

pub fn predictions(model: &DiscourseModel, posts: &[EncodedPost]) -> Result<Vec<Prediction>> {
    let labels = predict_labels(model, posts)?;
    Ok(posts
        .iter()
        .zip(labels)
        .map(|(p, label)| Prediction {
            id: p.id.clone(),
            label,
            truth: p.label,
        })
        .collect())
}

pub fn score(preds: &[Prediction]) -> Result<EvalReport> {
    let truths = preds
        .iter()
        .map(|p| p.truth.ok_or_else(|| Error::MissingLabel(p.id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<DiscourseLabel> = preds.iter().map(|p| p.label).collect();
    f1_report(&labels, &truths)
}

/// Encode, train on the train part with early stopping on validation, and
/// score the best model on the test part.
pub fn fit(cfg: &RunConfig, dataset: &Dataset, split: &DatasetSplit) -> Result<FitResult> {
    cfg.validate()?;
    check_split(dataset, split)?;
    let extractor = FeatureExtractor::from_config(cfg)?;
    let train_set = extractor.encode(dataset, &split.train)?;
    let val_set = extractor.encode(dataset, &split.validation)?;
    let test_set = extractor.encode(dataset, &split.test)?;
    let model = DiscourseModel::new(cfg.model.clone(), cfg.train.seed)?;
    let outcome = train(model, &train_set, &val_set, &cfg.train)?;
    let test_predictions = predictions(&outcome.model, &test_set)?;
    let test_report = score(&test_predictions)?;
    Ok(FitResult {
        outcome,
        test_report,
        test_predictions,
    })
}
