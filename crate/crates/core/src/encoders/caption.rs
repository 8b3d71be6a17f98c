use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EncoderBackend;
use crate::corpus::laplacian_variance;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CaptionRecord {
    id: String,
    caption: String,
}

/// Reads a line-delimited `{id, caption}` file.
pub fn read_captions(path: &Path) -> Result<HashMap<String, String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.insert(rec.id, rec.caption);
    }
    Ok(out)
}

pub fn write_captions<'a>(path: &Path, captions: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let mut text = String::new();
    for (id, caption) in captions {
        let rec = CaptionRecord {
            id: id.to_string(),
            caption: caption.to_string(),
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Describes an image from colour, brightness and texture statistics.
/// Deterministic; the seed only varies the wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubCaptioner {
    pub seed: u64,
}

impl StubCaptioner {
    pub fn describe(&self, img: &image::DynamicImage) -> String {
        let rgb = img.to_rgb8();
        let n = (rgb.width() as f64 * rgb.height() as f64).max(1.0);
        let mut sum = [0.0f64; 3];
        for p in rgb.pixels() {
            for (s, v) in sum.iter_mut().zip(p.0) {
                *s += v as f64;
            }
        }
        let mean = sum.map(|s| s / n);
        let brightness = (mean[0] + mean[1] + mean[2]) / 3.0;
        let spread = mean.iter().copied().fold(f64::MIN, f64::max) - mean.iter().copied().fold(f64::MAX, f64::min);
        let colour = if spread < 24.0 {
            "gray"
        } else {
            ["red", "green", "blue"][mean
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0)]
        };
        let tone = if brightness < 85.0 {
            "dark"
        } else if brightness > 170.0 {
            "bright"
        } else {
            "muted"
        };
        let detail = if laplacian_variance(&img.to_luma8()) > 100.0 {
            "with lots of detail"
        } else {
            "with smooth surfaces"
        };
        const NOUNS: [&str; 4] = ["scene", "picture", "photo", "view"];
        let noun = NOUNS[(self.seed % NOUNS.len() as u64) as usize];
        format!("a {tone} {colour} {noun} {detail}")
    }
}

/// Where captions come from. Precomputed files are the normal route so the
/// heavyweight captioner runs once, offline.
#[derive(Debug, Clone)]
pub enum CaptionSource {
    Precomputed {
        path: PathBuf,
        captions: HashMap<String, String>,
    },
    Stub(StubCaptioner),
    Pretrained {
        identifier: String,
    },
}

impl CaptionSource {
    /// Parses `precomputed:<path>` (relative paths resolve against `base`),
    /// `stub:<seed>`, or a pretrained captioner identifier.
    pub fn from_spec(spec: &str, base: &Path) -> Result<Self> {
        if let Some(p) = spec.strip_prefix("precomputed:") {
            let path = base.join(p);
            let captions = read_captions(&path)?;
            return Ok(CaptionSource::Precomputed { path, captions });
        }
        match spec.parse::<EncoderBackend>()? {
            EncoderBackend::Stub { seed } => Ok(CaptionSource::Stub(StubCaptioner { seed })),
            EncoderBackend::Pretrained { identifier } => Ok(CaptionSource::Pretrained { identifier }),
        }
    }

    pub fn precomputed(captions: HashMap<String, String>) -> Self {
        CaptionSource::Precomputed {
            path: PathBuf::new(),
            captions,
        }
    }

    pub fn caption_image(&self, post_id: &str, image_path: &Path) -> Result<String> {
        match self {
            CaptionSource::Precomputed { captions, .. } => captions
                .get(post_id)
                .filter(|c| !c.trim().is_empty())
                .cloned()
                .ok_or_else(|| Error::MissingCaption(post_id.to_string())),
            CaptionSource::Stub(stub) => {
                let img = image::open(image_path).map_err(|e| Error::ImageDecode {
                    path: image_path.to_path_buf(),
                    message: e.to_string(),
                })?;
                Ok(stub.describe(&img))
            }
            CaptionSource::Pretrained { identifier } => Err(Error::BackendUnavailable(identifier.clone())),
        }
    }
}
