use std::fmt;
use std::str::FromStr;

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{to_probs, ClassifierHead, Probs, N_LABELS, PROB_FLOOR};
use crate::corpus::DiscourseLabel;
use crate::encoders::{CaptionFeatures, ImageProjection, RegionFeatures, TextFeatures};
use crate::error::{Error, Result};
use crate::fusion::{AttentionConfig, Fusion, FusionOutput, FusionStrategy};
use crate::nn::{prefixed, Matrix, Parameters};

/// Which input modalities reach the classifier. Absent modalities have
/// their inputs and their slice of the fused vector replaced by zeros, so
/// the head keeps the same shape under every ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Modalities {
    pub text: bool,
    pub image: bool,
    pub caption: bool,
}

impl Modalities {
    pub const ALL: Modalities = Modalities {
        text: true,
        image: true,
        caption: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.text || self.image || self.caption)
    }
}

impl Default for Modalities {
    fn default() -> Self {
        Modalities::ALL
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.text, "text"), (self.image, "image"), (self.caption, "caption")]
            .into_iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| n)
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Modalities {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Modalities {
            text: false,
            image: false,
            caption: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "text" => m.text = true,
                "image" => m.image = true,
                "caption" => m.caption = true,
                other => return Err(Error::Config(format!("unknown modality '{other}'"))),
            }
        }
        if m.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Shared hidden size `d` of text, caption and projected image features.
    pub dim: usize,
    pub heads: usize,
    /// Image grid side `M`.
    pub grid: usize,
    pub image_channels: usize,
    pub text_cap: usize,
    pub caption_cap: usize,
    pub fusion: FusionStrategy,
    pub modalities: Modalities,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 768,
            heads: 6,
            grid: 14,
            image_channels: 2048,
            text_cap: 20,
            caption_cap: 20,
            fusion: FusionStrategy::MultiheadAtt,
            modalities: Modalities::ALL,
        }
    }
}

impl ModelConfig {
    pub fn attention(&self) -> Result<AttentionConfig> {
        AttentionConfig::new(self.heads, self.dim)
    }
}

/// Encoder outputs for one post. Image features are kept before projection
/// because the projection is trained with the rest of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPost {
    pub id: String,
    pub label: Option<DiscourseLabel>,
    pub text: TextFeatures,
    pub image: RegionFeatures,
    pub caption: CaptionFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscourseModel {
    pub config: ModelConfig,
    pub projection: ImageProjection,
    pub fusion: Fusion,
    pub head: ClassifierHead,
}

impl DiscourseModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.modalities.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = ImageProjection::new(&mut rng, config.image_channels, config.dim);
        let fusion = Fusion::new(config.fusion, config.attention()?, &mut rng)?;
        let head = ClassifierHead::new(&mut rng, fusion.fused_dim(), config.dim);
        Ok(DiscourseModel {
            config,
            projection,
            fusion,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        DiscourseModel {
            config: self.config.clone(),
            projection: self.projection.zeros_like(),
            fusion: self.fusion.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    fn masked_inputs<'a>(&self, post: &'a EncodedPost) -> (std::borrow::Cow<'a, TextFeatures>, std::borrow::Cow<'a, RegionFeatures>, std::borrow::Cow<'a, CaptionFeatures>) {
        use std::borrow::Cow;
        let m = self.config.modalities;
        let text = if m.text {
            Cow::Borrowed(&post.text)
        } else {
            Cow::Owned(TextFeatures::zeros(post.text.len(), post.text.dim()))
        };
        let image = if m.image {
            Cow::Borrowed(&post.image)
        } else {
            let mut z = post.image.clone();
            z.regions.fill(0.0);
            Cow::Owned(z)
        };
        let caption = if m.caption {
            Cow::Borrowed(&post.caption)
        } else {
            Cow::Owned(CaptionFeatures::zeros(post.caption.len(), post.caption.states.ncols()))
        };
        (text, image, caption)
    }

    fn mask_fused(&self, fused: &mut ndarray::Array1<f64>) {
        let d = self.config.dim;
        let m = self.config.modalities;
        for (present, range) in [(m.caption, 0..d), (m.text, d..2 * d), (m.image, 2 * d..3 * d)] {
            if !present {
                fused.slice_mut(s![range]).fill(0.0);
            }
        }
    }

    pub fn fuse(&self, post: &EncodedPost) -> Result<FusionOutput> {
        let (text, raw, caption) = self.masked_inputs(post);
        let image = self.projection.project(&raw);
        let mut out = self.fusion.fuse(&text, &image, &caption)?;
        self.mask_fused(&mut out.fused);
        Ok(out)
    }

    pub fn forward(&self, post: &EncodedPost) -> Result<(FusionOutput, Probs)> {
        let out = self.fuse(post)?;
        let probs = self.head.probabilities(out.fused.view())?;
        Ok((out, probs))
    }

    /// Weighted negative log-likelihood of the post's label times `scale`,
    /// with the gradient of that quantity for every parameter.
    pub fn loss_and_grad(&self, post: &EncodedPost, scale: f64) -> Result<(f64, DiscourseModel)> {
        let label = post
            .label
            .ok_or_else(|| Error::MissingLabel(post.id.clone()))?;
        let (text, raw, caption) = self.masked_inputs(post);
        let image = self.projection.project(&raw);
        let (mut out, fcache) = self.fusion.forward(&text, &image, &caption)?;
        self.mask_fused(&mut out.fused);
        let (logits, hcache) = self.head.logits(out.fused.view())?;
        let probs = to_probs(&logits);
        let nll = -probs[label.code()].max(PROB_FLOOR).ln();

        let mut d_logits = [0.0; N_LABELS];
        for (k, d) in d_logits.iter_mut().enumerate() {
            let target = if k == label.code() { 1.0 } else { 0.0 };
            *d = scale * (probs[k] - target);
        }
        let mut grad = self.zeros_like();
        let d_fused = self.head.backward(&hcache, &d_logits, &mut grad.head);
        let mut d_fused = d_fused.remove_axis(ndarray::Axis(0));
        self.mask_fused(&mut d_fused);
        let inputs = self.fusion.backward(&fcache, d_fused.view(), &mut grad.fusion);
        self.projection
            .linear
            .backward(raw.regions.view(), inputs.image.view(), &mut grad.projection.linear);
        Ok((scale * nll, grad))
    }
}

impl Parameters for DiscourseModel {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out = prefixed("projection", self.projection.params());
        out.extend(prefixed("fusion", self.fusion.params()));
        out.extend(prefixed("head", self.head.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.projection.params_mut();
        out.extend(self.fusion.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    pub(crate) fn toy_post(rng: &mut ChaCha8Rng, cfg: &ModelConfig, label: DiscourseLabel) -> EncodedPost {
        let mut m = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
        let states = m(4, cfg.dim);
        let pooled = crate::encoders::max_pool(states.view(), 4);
        EncodedPost {
            id: "t".into(),
            label: Some(label),
            text: TextFeatures { states, pooled },
            image: RegionFeatures {
                regions: m(cfg.grid * cfg.grid, cfg.image_channels),
                grid: cfg.grid,
            },
            caption: CaptionFeatures { states: m(2, cfg.dim) },
        }
    }

    #[test]
    fn modalities_parse_and_print() {
        let m: Modalities = "text, caption".parse().unwrap();
        assert!(m.text && m.caption && !m.image);
        assert_eq!(m.to_string(), "text,caption");
        assert!("".parse::<Modalities>().is_err());
        assert!("audio".parse::<Modalities>().is_err());
    }

    #[test]
    fn absent_modalities_zero_their_slices() {
        let cfg = ModelConfig {
            dim: 6,
            heads: 2,
            grid: 2,
            image_channels: 5,
            modalities: "text".parse().unwrap(),
            ..Default::default()
        };
        let model = DiscourseModel::new(cfg.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let post = toy_post(&mut rng, &cfg, DiscourseLabel::Insertion);
        let out = model.fuse(&post).unwrap();
        assert!(out.caption_slice().iter().all(|x| *x == 0.0));
        assert!(out.image_slice().iter().all(|x| *x == 0.0));
        assert_eq!(out.text_slice(), post.text.pooled);
        let (_, grad) = model.loss_and_grad(&post, 1.0).unwrap();
        assert!(grad.projection.linear.weight.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn fused_length_matches_head() {
        let cfg = ModelConfig {
            dim: 12,
            heads: 6,
            grid: 3,
            image_channels: 4,
            ..Default::default()
        };
        let model = DiscourseModel::new(cfg.clone(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (out, probs) = model.forward(&toy_post(&mut rng, &cfg, DiscourseLabel::Projection)).unwrap();
        assert_eq!(out.fused.len(), 36);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
