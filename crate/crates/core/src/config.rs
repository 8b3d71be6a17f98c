//! Run configuration: built-in defaults, overridden by a flat `key = value`
//! file, overridden by command-line flags. Keys match the CLI flag names.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::classifier::{ClassWeights, ModelConfig, TrainConfig};
use crate::corpus::QualityThresholds;
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_TRIALS;

pub const CONFIG_ECHO_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub text_backend: String,
    pub image_backend: String,
    /// `precomputed:<path>` (relative to the dataset directory),
    /// `stub:<seed>`, or a pretrained captioner identifier.
    pub caption_source: String,
    /// Upper bound on `M^2 * width` elements for one image tensor.
    pub memory_cap: usize,
    pub quality: QualityThresholds,
    pub significance_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            text_backend: "stub:0".into(),
            image_backend: "stub:0".into(),
            caption_source: "precomputed:captions.jsonl".into(),
            memory_cap: 1 << 24,
            quality: QualityThresholds::default(),
            significance_trials: DEFAULT_TRIALS,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "batch-size",
    "lr",
    "epochs",
    "patience",
    "class-weights",
    "hidden",
    "heads",
    "grid-size",
    "image-channels",
    "text-cap",
    "caption-cap",
    "fusion",
    "modalities",
    "backend-text",
    "backend-image",
    "caption-source",
    "memory-cap",
    "threshold-low-quality",
    "threshold-ocr",
    "threshold-portrait",
    "min-side",
    "significance-trials",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.train.seed = parse(key, value)?,
            "batch-size" => self.train.batch_size = parse(key, value)?,
            "lr" => self.train.learning_rate = parse(key, value)?,
            "epochs" => self.train.max_epochs = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "class-weights" => {
                self.train.class_weights = if value == "auto" {
                    None
                } else {
                    let ws: Vec<f64> = value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?;
                    let ws: [f64; 5] = ws
                        .try_into()
                        .map_err(|_| Error::Config("class-weights needs five values".into()))?;
                    if ws.iter().any(|w| w.is_nan() || *w <= 0.0) {
                        return Err(Error::Config("class weights must be strictly positive".into()));
                    }
                    Some(ClassWeights(ws))
                }
            }
            "hidden" => self.model.dim = parse(key, value)?,
            "heads" => self.model.heads = parse(key, value)?,
            "grid-size" => self.model.grid = parse(key, value)?,
            "image-channels" => self.model.image_channels = parse(key, value)?,
            "text-cap" => self.model.text_cap = parse(key, value)?,
            "caption-cap" => self.model.caption_cap = parse(key, value)?,
            "fusion" => self.model.fusion = value.parse()?,
            "modalities" => self.model.modalities = value.parse()?,
            "backend-text" => self.text_backend = value.to_string(),
            "backend-image" => self.image_backend = value.to_string(),
            "caption-source" => self.caption_source = value.to_string(),
            "memory-cap" => self.memory_cap = parse(key, value)?,
            "threshold-low-quality" => self.quality.low_quality = parse(key, value)?,
            "threshold-ocr" => self.quality.ocr_subtitle = parse(key, value)?,
            "threshold-portrait" => self.quality.portrait = parse(key, value)?,
            "min-side" => self.quality.min_side = parse(key, value)?,
            "significance-trials" => self.significance_trials = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "seed" => self.train.seed.to_string(),
            "batch-size" => self.train.batch_size.to_string(),
            "lr" => self.train.learning_rate.to_string(),
            "epochs" => self.train.max_epochs.to_string(),
            "patience" => self.train.patience.to_string(),
            "class-weights" => match &self.train.class_weights {
                None => "auto".into(),
                Some(w) => w.0.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            },
            "hidden" => self.model.dim.to_string(),
            "heads" => self.model.heads.to_string(),
            "grid-size" => self.model.grid.to_string(),
            "image-channels" => self.model.image_channels.to_string(),
            "text-cap" => self.model.text_cap.to_string(),
            "caption-cap" => self.model.caption_cap.to_string(),
            "fusion" => self.model.fusion.to_string(),
            "modalities" => self.model.modalities.to_string(),
            "backend-text" => self.text_backend.clone(),
            "backend-image" => self.image_backend.clone(),
            "caption-source" => self.caption_source.clone(),
            "memory-cap" => self.memory_cap.to_string(),
            "threshold-low-quality" => self.quality.low_quality.to_string(),
            "threshold-ocr" => self.quality.ocr_subtitle.to_string(),
            "threshold-portrait" => self.quality.portrait.to_string(),
            "min-side" => self.quality.min_side.to_string(),
            "significance-trials" => self.significance_trials.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text)
    }

    /// Every key with its effective value; feeding this back through
    /// [`RunConfig::apply_str`] reproduces the configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.attention()?;
        if self.model.grid == 0 {
            return Err(Error::Config("grid-size must be at least 1".into()));
        }
        if self.model.text_cap == 0 || self.model.caption_cap == 0 {
            return Err(Error::Config("token caps must be at least 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch-size must be positive".into()));
        }
        if self.train.learning_rate.is_nan() || self.train.learning_rate < 0.0 {
            return Err(Error::Config("lr must be non-negative".into()));
        }
        Ok(())
    }
}
