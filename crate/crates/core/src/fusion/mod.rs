//! Fusion of text, image and caption features into one vector
//! `[caption; text; image]`, each slice of width `d`.

mod attention;

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{CaptionFeatures, ImageFeatures, TextFeatures};
use crate::error::{Error, Result};
use crate::nn::{mean_rows, prefixed, Matrix, Parameters};

pub use attention::{scaled_dot_attention, AttentionConfig, MhaCache, MultiHeadAttention};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionStrategy {
    MultiheadAtt,
    ConcatFuse,
    Attention,
    CoAttention,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::ConcatFuse,
        FusionStrategy::Attention,
        FusionStrategy::CoAttention,
        FusionStrategy::MultiheadAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::MultiheadAtt => "multihead",
            FusionStrategy::ConcatFuse => "concat",
            FusionStrategy::Attention => "attention",
            FusionStrategy::CoAttention => "coattention",
        }
    }

    pub fn has_attention(self) -> bool {
        self != FusionStrategy::ConcatFuse
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multihead" | "multiheadatt" => Ok(FusionStrategy::MultiheadAtt),
            "concat" | "concatfuse" => Ok(FusionStrategy::ConcatFuse),
            "attention" => Ok(FusionStrategy::Attention),
            "coattention" | "co-attention" => Ok(FusionStrategy::CoAttention),
            _ => Err(Error::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// `[attended caption; pooled text (or image-aware text); attended image]`.
    pub fused: Array1<f64>,
    pub attended_image: Array1<f64>,
    pub attended_caption: Array1<f64>,
    /// Per head, `1 x M^2`. Empty for `ConcatFuse`.
    pub image_attention: Vec<Matrix>,
    /// Per head, `1 x N`. Empty for `ConcatFuse`.
    pub caption_attention: Vec<Matrix>,
    pub strategy: FusionStrategy,
}

impl FusionOutput {
    pub fn dim(&self) -> usize {
        self.fused.len() / 3
    }

    pub fn caption_slice(&self) -> ArrayView1<'_, f64> {
        self.fused.slice(s![..self.dim()])
    }

    pub fn text_slice(&self) -> ArrayView1<'_, f64> {
        let d = self.dim();
        self.fused.slice(s![d..2 * d])
    }

    pub fn image_slice(&self) -> ArrayView1<'_, f64> {
        let d = self.dim();
        self.fused.slice(s![2 * d..])
    }
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    image: Option<MhaCache>,
    caption: Option<MhaCache>,
    text: Option<MhaCache>,
    n_regions: usize,
    n_caption: usize,
}

/// Gradients of the loss with respect to the fusion inputs that sit
/// downstream of trainable parameters.
#[derive(Debug, Clone)]
pub struct FusionInputGrads {
    pub image: Matrix,
    pub caption: Matrix,
}

/// Fusion parameters. Which attention blocks exist depends on the strategy:
/// none for `ConcatFuse`, image and caption blocks otherwise, plus an
/// image-to-text block for `CoAttention`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub strategy: FusionStrategy,
    pub dim: usize,
    pub image_attention: Option<MultiHeadAttention>,
    pub caption_attention: Option<MultiHeadAttention>,
    pub text_attention: Option<MultiHeadAttention>,
}

impl Fusion {
    pub fn new(strategy: FusionStrategy, cfg: AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let block_cfg = match strategy {
            FusionStrategy::Attention => AttentionConfig::new(1, cfg.model_dim)?,
            _ => cfg,
        };
        let mut block = |on: bool| -> Result<Option<MultiHeadAttention>> {
            on.then(|| MultiHeadAttention::new(block_cfg, rng)).transpose()
        };
        let attn = strategy.has_attention();
        Ok(Fusion {
            strategy,
            dim: cfg.model_dim,
            image_attention: block(attn)?,
            caption_attention: block(attn)?,
            text_attention: block(strategy == FusionStrategy::CoAttention)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Fusion {
            strategy: self.strategy,
            dim: self.dim,
            image_attention: self.image_attention.as_ref().map(|m| m.zeros_like()),
            caption_attention: self.caption_attention.as_ref().map(|m| m.zeros_like()),
            text_attention: self.text_attention.as_ref().map(|m| m.zeros_like()),
        }
    }

    pub fn fused_dim(&self) -> usize {
        3 * self.dim
    }

    fn check_inputs(&self, text: &TextFeatures, image: &ImageFeatures, caption: &CaptionFeatures) -> Result<()> {
        let d = self.dim;
        let shapes = [
            ("text", text.states.dim()),
            ("image", image.regions.dim()),
            ("caption", caption.states.dim()),
        ];
        for (name, (rows, cols)) in shapes {
            if cols != d {
                return Err(Error::Shape(format!("{name} features are {rows}x{cols}, expected width {d}")));
            }
            if rows == 0 {
                return Err(Error::EmptyInput("modality with no rows"));
            }
        }
        if text.pooled.len() != d {
            return Err(Error::Shape(format!("pooled text has length {}, expected {d}", text.pooled.len())));
        }
        Ok(())
    }

    pub fn fuse(&self, text: &TextFeatures, image: &ImageFeatures, caption: &CaptionFeatures) -> Result<FusionOutput> {
        self.forward(text, image, caption).map(|(out, _)| out)
    }

    pub fn forward(
        &self,
        text: &TextFeatures,
        image: &ImageFeatures,
        caption: &CaptionFeatures,
    ) -> Result<(FusionOutput, FusionCache)> {
        self.check_inputs(text, image, caption)?;
        let query = text.pooled.view().insert_axis(Axis(0));
        let h_img = image.regions.view();
        let h_cap = caption.states.view();
        let mut cache = FusionCache {
            image: None,
            caption: None,
            text: None,
            n_regions: h_img.nrows(),
            n_caption: h_cap.nrows(),
        };

        let (img_vec, cap_vec, text_vec, img_w, cap_w) = match self.strategy {
            FusionStrategy::ConcatFuse => (
                mean_rows(h_img),
                mean_rows(h_cap),
                query.to_owned(),
                Vec::new(),
                Vec::new(),
            ),
            _ => {
                let img_block = self.image_attention.as_ref().expect("attention strategy has image block");
                let cap_block = self.caption_attention.as_ref().expect("attention strategy has caption block");
                let (img_vec, img_cache) = img_block.forward_cached(query, h_img, h_img)?;
                let (cap_vec, cap_cache) = cap_block.forward_cached(query, h_cap, h_cap)?;
                let img_w = img_cache.weights().to_vec();
                let cap_w = cap_cache.weights().to_vec();
                cache.image = Some(img_cache);
                cache.caption = Some(cap_cache);
                let text_vec = match &self.text_attention {
                    Some(block) => {
                        let img_query = mean_rows(h_img);
                        let h_txt = text.states.view();
                        let (t, c) = block.forward_cached(img_query.view(), h_txt, h_txt)?;
                        cache.text = Some(c);
                        t
                    }
                    None => query.to_owned(),
                };
                (img_vec, cap_vec, text_vec, img_w, cap_w)
            }
        };

        let fused = concatenate(Axis(1), &[cap_vec.view(), text_vec.view(), img_vec.view()])
            .expect("equal row counts")
            .remove_axis(Axis(0));
        let out = FusionOutput {
            fused,
            attended_image: img_vec.remove_axis(Axis(0)),
            attended_caption: cap_vec.remove_axis(Axis(0)),
            image_attention: img_w,
            caption_attention: cap_w,
            strategy: self.strategy,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradients
    /// with respect to the image and caption feature matrices.
    pub fn backward(&self, cache: &FusionCache, d_fused: ArrayView1<f64>, grad: &mut Fusion) -> FusionInputGrads {
        let d = self.dim;
        let row = |r: std::ops::Range<usize>| d_fused.slice(s![r]).to_owned().insert_axis(Axis(0));
        let (d_cap, d_txt, d_img) = (row(0..d), row(d..2 * d), row(2 * d..3 * d));
        let mut g_img = Array2::zeros((cache.n_regions, d));
        let mut g_cap = Array2::zeros((cache.n_caption, d));

        match self.strategy {
            FusionStrategy::ConcatFuse => {
                g_img += &(&d_img / cache.n_regions as f64);
                g_cap += &(&d_cap / cache.n_caption as f64);
            }
            _ => {
                let blocks = [
                    (&self.image_attention, &mut grad.image_attention, &cache.image, &d_img, &mut g_img),
                    (&self.caption_attention, &mut grad.caption_attention, &cache.caption, &d_cap, &mut g_cap),
                ];
                for (block, gblock, c, d_out, g_in) in blocks {
                    let (block, gblock, c) = (block.as_ref().unwrap(), gblock.as_mut().unwrap(), c.as_ref().unwrap());
                    let (_dq, dk, dv) = block.backward(c, d_out.view(), gblock);
                    *g_in += &dk;
                    *g_in += &dv;
                }
                if let (Some(block), Some(gblock), Some(c)) =
                    (&self.text_attention, grad.text_attention.as_mut(), cache.text.as_ref())
                {
                    // The text block's query is the mean image region.
                    let (dq, _dk, _dv) = block.backward(c, d_txt.view(), gblock);
                    g_img += &(&dq / cache.n_regions as f64);
                }
            }
        }
        FusionInputGrads {
            image: g_img,
            caption: g_cap,
        }
    }
}

impl Parameters for Fusion {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (name, block) in [
            ("image_attention", &self.image_attention),
            ("caption_attention", &self.caption_attention),
            ("text_attention", &self.text_attention),
        ] {
            if let Some(b) = block {
                out.extend(prefixed(name, b.params()));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for b in [&mut self.image_attention, &mut self.caption_attention, &mut self.text_attention]
            .into_iter()
            .flatten()
        {
            out.extend(b.params_mut());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_m(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn inputs(rng: &mut ChaCha8Rng, d: usize, regions: usize, tokens: usize, cap: usize) -> (TextFeatures, ImageFeatures, CaptionFeatures) {
        let states = rand_m(rng, tokens, d);
        let pooled = crate::encoders::max_pool(states.view(), tokens);
        (
            TextFeatures { states, pooled },
            ImageFeatures {
                regions: rand_m(rng, regions, d),
                grid: (regions as f64).sqrt() as usize,
            },
            CaptionFeatures {
                states: rand_m(rng, cap, d),
            },
        )
    }

    #[test]
    fn multihead_shapes_for_default_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AttentionConfig::new(6, 12).unwrap();
        let f = Fusion::new(FusionStrategy::MultiheadAtt, cfg, &mut rng).unwrap();
        let (t, i, c) = inputs(&mut rng, 12, 196, 7, 5);
        let out = f.fuse(&t, &i, &c).unwrap();
        assert_eq!(out.fused.len(), 36);
        assert_eq!(out.image_attention.len(), 6);
        assert!(out.image_attention.iter().all(|w| w.dim() == (1, 196)));
        assert_eq!(out.text_slice(), t.pooled);
        for w in out.image_attention.iter().chain(&out.caption_attention) {
            assert!((w.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_with_zero_image_and_caption() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Fusion::new(FusionStrategy::ConcatFuse, AttentionConfig::new(2, 4).unwrap(), &mut rng).unwrap();
        assert_eq!(f.param_count(), 0);
        let (t, mut i, mut c) = inputs(&mut rng, 4, 9, 3, 2);
        i.regions.fill(0.0);
        c.states.fill(0.0);
        let out = f.fuse(&t, &i, &c).unwrap();
        let mut expected = Array1::zeros(12);
        expected.slice_mut(s![4..8]).assign(&t.pooled);
        assert_eq!(out.fused, expected);
        assert!(out.image_attention.is_empty());
    }

    #[test]
    fn single_head_multihead_equals_attention_with_shared_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AttentionConfig::new(1, 6).unwrap();
        let mut mh = Fusion::new(FusionStrategy::MultiheadAtt, cfg, &mut rng).unwrap();
        let mut at = Fusion::new(FusionStrategy::Attention, cfg, &mut rng).unwrap();
        let eye = MultiHeadAttention::identity(cfg).unwrap();
        for f in [&mut mh, &mut at] {
            f.image_attention = Some(eye.clone());
            f.caption_attention = Some(eye.clone());
        }
        let (t, i, c) = inputs(&mut rng, 6, 16, 4, 3);
        let a = mh.fuse(&t, &i, &c).unwrap();
        let b = at.fuse(&t, &i, &c).unwrap();
        assert!((&a.fused - &b.fused).iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn caption_branch_never_touches_text_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for strategy in FusionStrategy::ALL {
            let f = Fusion::new(strategy, AttentionConfig::new(2, 8).unwrap(), &mut rng).unwrap();
            let (t, i, c) = inputs(&mut rng, 8, 4, 3, 2);
            let (_, _, c2) = inputs(&mut rng, 8, 4, 3, 5);
            let a = f.fuse(&t, &i, &c).unwrap();
            let b = f.fuse(&t, &i, &c2).unwrap();
            assert_eq!(a.text_slice(), b.text_slice(), "{strategy}");
            assert_eq!(a.image_slice(), b.image_slice(), "{strategy}");
            assert_ne!(a.caption_slice(), b.caption_slice(), "{strategy}");
        }
    }

    #[test]
    fn coattention_text_slice_is_image_aware() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Fusion::new(FusionStrategy::CoAttention, AttentionConfig::new(2, 8).unwrap(), &mut rng).unwrap();
        let (t, i, c) = inputs(&mut rng, 8, 4, 3, 2);
        let (_, i2, _) = inputs(&mut rng, 8, 4, 3, 2);
        let a = f.fuse(&t, &i, &c).unwrap();
        let b = f.fuse(&t, &i2, &c).unwrap();
        assert_ne!(a.text_slice(), b.text_slice());
        assert_eq!(a.caption_slice(), b.caption_slice());
    }

    #[test]
    fn strategy_names() {
        for s in FusionStrategy::ALL {
            assert_eq!(s.name().parse::<FusionStrategy>().unwrap(), s);
        }
        assert!(matches!("gated".parse::<FusionStrategy>(), Err(Error::UnknownStrategy(_))));
    }

    #[test]
    fn width_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = Fusion::new(FusionStrategy::MultiheadAtt, AttentionConfig::new(2, 8).unwrap(), &mut rng).unwrap();
        let (t, _, c) = inputs(&mut rng, 8, 4, 3, 2);
        let (_, i, _) = inputs(&mut rng, 6, 4, 3, 2);
        assert!(matches!(f.fuse(&t, &i, &c), Err(Error::Shape(_))));
    }
}
