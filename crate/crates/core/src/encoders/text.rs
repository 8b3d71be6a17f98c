use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{keyed_rng, EncoderBackend};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Token-level text states and their max-pooled summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub states: Matrix,
    pub pooled: Array1<f64>,
}

impl TextFeatures {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        TextFeatures {
            states: Array2::zeros((len, dim)),
            pooled: Array1::zeros(dim),
        }
    }
}

/// Token-level caption states. Same truncation rules as text, no pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionFeatures {
    pub states: Matrix,
}

impl CaptionFeatures {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        CaptionFeatures {
            states: Array2::zeros((len, dim)),
        }
    }
}

/// Element-wise max over the first `valid` rows; later rows are padding and
/// are masked to negative infinity before the max.
pub fn max_pool(states: ArrayView2<f64>, valid: usize) -> Array1<f64> {
    let mut pooled = Array1::from_elem(states.ncols(), f64::NEG_INFINITY);
    for (i, row) in states.axis_iter(Axis(0)).enumerate() {
        let masked = i >= valid;
        for (p, &x) in pooled.iter_mut().zip(row) {
            let x = if masked { f64::NEG_INFINITY } else { x };
            if x > *p {
                *p = x;
            }
        }
    }
    pooled
}

/// Lower-cased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub backend: EncoderBackend,
    pub dim: usize,
    pub max_tokens: usize,
}

impl TextEncoder {
    pub fn new(backend: EncoderBackend, dim: usize, max_tokens: usize) -> Self {
        TextEncoder {
            backend,
            dim,
            max_tokens,
        }
    }

    fn encode_tokens(&self, text: &str) -> Result<Matrix> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyInput("text has no tokens"));
        }
        tokens.truncate(self.max_tokens.max(1));
        match &self.backend {
            EncoderBackend::Stub { seed } => {
                let mut states = Array2::zeros((tokens.len(), self.dim));
                for (mut row, tok) in states.rows_mut().into_iter().zip(&tokens) {
                    let mut rng = keyed_rng(*seed, "token", tok.as_bytes());
                    row.iter_mut()
                        .for_each(|x| *x = rng.random_range(-1.0..1.0));
                }
                Ok(states)
            }
            EncoderBackend::Pretrained { identifier } => {
                Err(Error::BackendUnavailable(identifier.clone()))
            }
        }
    }

    pub fn encode_text(&self, text: &str) -> Result<TextFeatures> {
        let states = self.encode_tokens(text)?;
        let pooled = max_pool(states.view(), states.nrows());
        Ok(TextFeatures { states, pooled })
    }

    pub fn encode_caption(&self, caption: &str) -> Result<CaptionFeatures> {
        Ok(CaptionFeatures {
            states: self.encode_tokens(caption)?,
        })
    }
}
