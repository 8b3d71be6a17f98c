//! Per-modality feature extraction.
//!
//! Every encoder has a deterministic stub backend so the whole pipeline runs
//! without pretrained weights. Pretrained backends are named by identifier;
//! this build ships no weights for them and reports them as unavailable.

mod caption;
mod image;
mod text;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::Error;

pub use self::caption::{read_captions, write_captions, CaptionSource, StubCaptioner};
pub use self::image::{
    adaptive_avg_pool, ImageBackbone, ImageEncoder, ImageFeatures, ImageProjection, RegionFeatures,
};
pub use self::text::{max_pool, tokenize, CaptionFeatures, TextEncoder, TextFeatures};

/// Backend selector shared by all encoders: `stub:<seed>` or a pretrained
/// model identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderBackend {
    Stub { seed: u64 },
    Pretrained { identifier: String },
}

impl EncoderBackend {
    pub fn stub(seed: u64) -> Self {
        EncoderBackend::Stub { seed }
    }
}

impl FromStr for EncoderBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if let Some(seed) = s.strip_prefix("stub:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::Config(format!("bad stub seed in '{s}'")))?;
            return Ok(EncoderBackend::Stub { seed });
        }
        if s.is_empty() {
            return Err(Error::Config("empty backend identifier".into()));
        }
        Ok(EncoderBackend::Pretrained {
            identifier: s.to_string(),
        })
    }
}

impl fmt::Display for EncoderBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderBackend::Stub { seed } => write!(f, "stub:{seed}"),
            EncoderBackend::Pretrained { identifier } => f.write_str(identifier),
        }
    }
}

/// RNG keyed on a seed and a byte string, stable across processes and
/// platforms.
pub(crate) fn keyed_rng(seed: u64, domain: &str, key: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(key);
    ChaCha8Rng::from_seed(h.finalize().into())
}
