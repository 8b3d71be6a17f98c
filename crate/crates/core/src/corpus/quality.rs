//! Heuristic screens for image-text pairs that are unusable for discourse
//! labelling. Background-type pairs need world knowledge and are left to
//! annotators; no score is produced for them.

use std::collections::BTreeMap;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::MultimediaPost;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    Portrait,
    Background,
    LowQuality,
    OcrSubtitle,
}

/// Flag thresholds plus the calibration constants the detectors use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityThresholds {
    pub low_quality: f64,
    pub ocr_subtitle: f64,
    pub portrait: f64,
    /// Images whose shorter side is below this many pixels score 1.0 on LowQuality.
    pub min_side: u32,
    /// Laplacian variance (0-255 grey scale) treated as fully sharp.
    pub sharpness_reference: f64,
    /// Face-box area fraction that saturates the face component of Portrait.
    pub face_area_reference: f64,
    /// Share of the Portrait score carried by the face component.
    pub face_weight: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        QualityThresholds {
            low_quality: 0.8,
            ocr_subtitle: 0.3,
            portrait: 0.5,
            min_side: 32,
            sharpness_reference: 500.0,
            face_area_reference: 0.3,
            face_weight: 0.7,
        }
    }
}

impl QualityThresholds {
    fn threshold(&self, flag: QualityFlag) -> Option<f64> {
        match flag {
            QualityFlag::LowQuality => Some(self.low_quality),
            QualityFlag::OcrSubtitle => Some(self.ocr_subtitle),
            QualityFlag::Portrait => Some(self.portrait),
            QualityFlag::Background => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub id: String,
    pub flags: Vec<QualityFlag>,
    pub scores: BTreeMap<QualityFlag, f64>,
}

const CELL: u32 = 8;
const TEXT_CONTRAST: u8 = 96;
const TEXT_EDGE_DENSITY: f64 = 0.15;
const EDGE_MAGNITUDE: i32 = 64;
const MIN_TEXT_CELLS: usize = 3;

/// Decodes the post's image and scores it. See [`screen_image`].
pub fn quality_screen(
    post: &MultimediaPost,
    image_path: &Path,
    thresholds: &QualityThresholds,
) -> Result<QualityVerdict> {
    let img = image::open(image_path).map_err(|e| Error::ImageDecode {
        path: image_path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(screen_image(post, &img, thresholds))
}

pub fn screen_image(
    post: &MultimediaPost,
    img: &DynamicImage,
    thresholds: &QualityThresholds,
) -> QualityVerdict {
    let gray = img.to_luma8();
    let rgb = img.to_rgb8();

    let mut scores = BTreeMap::new();
    scores.insert(QualityFlag::LowQuality, low_quality_score(&gray, thresholds));
    scores.insert(QualityFlag::OcrSubtitle, text_coverage(&gray));
    let face = face_area_fraction(&rgb);
    let face_part = (face / thresholds.face_area_reference).min(1.0);
    let portrait = thresholds.face_weight * face_part
        + (1.0 - thresholds.face_weight) * quote_density(&post.text);
    scores.insert(QualityFlag::Portrait, portrait.clamp(0.0, 1.0));

    let flags = scores
        .iter()
        .filter(|(f, s)| thresholds.threshold(**f).is_some_and(|t| **s > t))
        .map(|(f, _)| *f)
        .collect();
    QualityVerdict {
        id: post.id.clone(),
        flags,
        scores,
    }
}

fn low_quality_score(gray: &GrayImage, thr: &QualityThresholds) -> f64 {
    let (w, h) = gray.dimensions();
    if w.min(h) < thr.min_side {
        return 1.0;
    }
    let sharpness = (laplacian_variance(gray) / thr.sharpness_reference).min(1.0);
    1.0 - sharpness
}

pub(crate) fn laplacian_variance(gray: &GrayImage) -> f64 {
    let (w, h) = gray.dimensions();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let px = |x: u32, y: u32| gray.get_pixel(x, y)[0] as f64;
    let mut values = Vec::with_capacity(((w - 2) * (h - 2)) as usize);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let lap = px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y);
            values.push(lap);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Cell grid over the image with per-cell booleans.
struct CellMask {
    cols: u32,
    rows: u32,
    on: Vec<bool>,
}

impl CellMask {
    fn build(w: u32, h: u32, mut pred: impl FnMut(u32, u32, u32, u32) -> bool) -> Self {
        let cols = w.div_ceil(CELL);
        let rows = h.div_ceil(CELL);
        let mut on = Vec::with_capacity((cols * rows) as usize);
        for r in 0..rows {
            for c in 0..cols {
                let x0 = c * CELL;
                let y0 = r * CELL;
                on.push(pred(x0, y0, (x0 + CELL).min(w), (y0 + CELL).min(h)));
            }
        }
        CellMask { cols, rows, on }
    }

    /// Bounding boxes (in cells, inclusive) of 4-connected components.
    fn component_boxes(&self) -> Vec<(usize, [u32; 4])> {
        let mut seen = vec![false; self.on.len()];
        let mut boxes = Vec::new();
        for start in 0..self.on.len() {
            if !self.on[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut size = 0;
            let mut bb = [u32::MAX, u32::MAX, 0, 0];
            while let Some(i) = stack.pop() {
                size += 1;
                let (c, r) = (i as u32 % self.cols, i as u32 / self.cols);
                bb = [bb[0].min(c), bb[1].min(r), bb[2].max(c), bb[3].max(r)];
                let mut push = |c: u32, r: u32| {
                    let j = (r * self.cols + c) as usize;
                    if self.on[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if c > 0 {
                    push(c - 1, r);
                }
                if c + 1 < self.cols {
                    push(c + 1, r);
                }
                if r > 0 {
                    push(c, r - 1);
                }
                if r + 1 < self.rows {
                    push(c, r + 1);
                }
            }
            boxes.push((size, bb));
        }
        boxes
    }
}

fn pixel_area_of_cells(covered: &[bool], cols: u32, w: u32, h: u32) -> u64 {
    covered
        .iter()
        .enumerate()
        .filter(|(_, on)| **on)
        .map(|(i, _)| {
            let (c, r) = (i as u32 % cols, i as u32 / cols);
            let cw = ((c + 1) * CELL).min(w) - c * CELL;
            let ch = ((r + 1) * CELL).min(h) - r * CELL;
            (cw * ch) as u64
        })
        .sum()
}

/// Fraction of the image covered by the union of detected text boxes.
/// A cell is text-like when it has both high contrast and dense strong edges;
/// connected runs of such cells become boxes.
pub(crate) fn text_coverage(gray: &GrayImage) -> f64 {
    let (w, h) = gray.dimensions();
    if w < 2 || h < 2 {
        return 0.0;
    }
    let px = |x: u32, y: u32| gray.get_pixel(x, y)[0] as i32;
    let mask = CellMask::build(w, h, |x0, y0, x1, y1| {
        let (mut lo, mut hi) = (u8::MAX, 0u8);
        let mut strong = 0usize;
        let mut total = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let v = gray.get_pixel(x, y)[0];
                lo = lo.min(v);
                hi = hi.max(v);
                let dx = if x + 1 < w { px(x + 1, y) - px(x, y) } else { 0 };
                let dy = if y + 1 < h { px(x, y + 1) - px(x, y) } else { 0 };
                if dx.abs() + dy.abs() > EDGE_MAGNITUDE {
                    strong += 1;
                }
                total += 1;
            }
        }
        hi - lo >= TEXT_CONTRAST && strong as f64 / total as f64 >= TEXT_EDGE_DENSITY
    });

    let mut covered = vec![false; mask.on.len()];
    for (size, [c0, r0, c1, r1]) in mask.component_boxes() {
        if size < MIN_TEXT_CELLS {
            continue;
        }
        for r in r0..=r1 {
            for c in c0..=c1 {
                covered[(r * mask.cols + c) as usize] = true;
            }
        }
    }
    pixel_area_of_cells(&covered, mask.cols, w, h) as f64 / (w as u64 * h as u64) as f64
}

fn is_skin(r: u8, g: u8, b: u8) -> bool {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (77.0..=127.0).contains(&cb) && (133.0..=173.0).contains(&cr)
}

/// Area fraction of the bounding box around the largest skin-toned region.
pub(crate) fn face_area_fraction(rgb: &RgbImage) -> f64 {
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return 0.0;
    }
    let mask = CellMask::build(w, h, |x0, y0, x1, y1| {
        let mut skin = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = rgb.get_pixel(x, y);
                if is_skin(p[0], p[1], p[2]) {
                    skin += 1;
                }
            }
        }
        2 * skin > ((x1 - x0) * (y1 - y0)) as usize
    });
    let Some((_, [c0, r0, c1, r1])) = mask.component_boxes().into_iter().max_by_key(|b| b.0) else {
        return 0.0;
    };
    let mut covered = vec![false; mask.on.len()];
    for r in r0..=r1 {
        for c in c0..=c1 {
            covered[(r * mask.cols + c) as usize] = true;
        }
    }
    pixel_area_of_cells(&covered, mask.cols, w, h) as f64 / (w as u64 * h as u64) as f64
}

/// Quote marks per whitespace token, saturating at 1.
pub(crate) fn quote_density(text: &str) -> f64 {
    const QUOTES: &[char] = &['"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '\u{ab}', '\u{bb}'];
    let tokens = text.split_whitespace().count();
    if tokens == 0 {
        return 0.0;
    }
    let quotes = text.chars().filter(|c| QUOTES.contains(c)).count();
    (quotes as f64 / tokens as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    fn post(text: &str) -> MultimediaPost {
        MultimediaPost {
            id: "q".into(),
            text: text.into(),
            image: "q.png".into(),
            caption: None,
            label: None,
        }
    }

    // 5x7 bitmaps, one row per u8 (low 5 bits).
    const GLYPHS: [[u8; 7]; 6] = [
        [0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11], // A
        [0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e], // B
        [0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e], // C
        [0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f], // E
        [0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11], // H
        [0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04], // T
    ];

    /// White canvas with black glyph rows filling the top `rows_px` pixels.
    fn text_image(w: u32, h: u32, rows_px: u32) -> DynamicImage {
        let mut img = GrayImage::from_pixel(w, h, Luma([255]));
        let scale = 2;
        let (gw, gh) = (6 * scale, 9 * scale);
        let mut k = 0;
        for line in 0..rows_px / gh {
            for col in 0..w / gw {
                let glyph = GLYPHS[k % GLYPHS.len()];
                k += 1;
                for (gy, bits) in glyph.iter().enumerate() {
                    for gx in 0..5 {
                        if bits & (0x10 >> gx) == 0 {
                            continue;
                        }
                        for dy in 0..scale {
                            for dx in 0..scale {
                                let x = col * gw + gx * scale + dx;
                                let y = line * gh + gy as u32 * scale + dy;
                                if x < w && y < h {
                                    img.put_pixel(x, y, Luma([0]));
                                }
                            }
                        }
                    }
                }
            }
        }
        DynamicImage::ImageLuma8(img)
    }

    /// Smooth green-blue gradient with mild deterministic texture.
    fn natural_image(w: u32, h: u32) -> DynamicImage {
        let mut state = 0x2545_f491_u32;
        let img = RgbImage::from_fn(w, h, |x, y| {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            let noise = (state % 41) as i32 - 20;
            let base_g = 80 + (x * 100 / w) as i32;
            let base_b = 120 + (y * 80 / h) as i32;
            Rgb([
                (40 + noise).clamp(0, 255) as u8,
                (base_g + noise).clamp(0, 255) as u8,
                (base_b + noise).clamp(0, 255) as u8,
            ])
        });
        DynamicImage::ImageRgb8(img)
    }

    #[test]
    fn uniform_image_is_low_quality() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(8, 8, Rgb([90, 90, 90])));
        let thr = QualityThresholds {
            low_quality: 0.999,
            ..Default::default()
        };
        let v = screen_image(&post("plain text"), &img, &thr);
        assert_eq!(v.scores[&QualityFlag::LowQuality], 1.0);
        assert_eq!(v.flags, vec![QualityFlag::LowQuality]);

        // zero variance still scores 1.0 when the size floor is disabled
        let thr = QualityThresholds {
            min_side: 0,
            ..Default::default()
        };
        let v = screen_image(&post("plain text"), &img, &thr);
        assert_eq!(v.scores[&QualityFlag::LowQuality], 1.0);
    }

    #[test]
    fn rendered_text_is_flagged_as_subtitle() {
        let img = text_image(160, 160, 96);
        let v = screen_image(&post("look at this"), &img, &QualityThresholds::default());
        let score = v.scores[&QualityFlag::OcrSubtitle];
        // Measured coverage for 96/160 px of text rows on this renderer.
        assert!((0.5..=0.7).contains(&score), "coverage {score}");
        assert!(v.flags.contains(&QualityFlag::OcrSubtitle));
    }

    #[test]
    fn clean_natural_image_has_no_flags() {
        let img = natural_image(128, 96);
        let v = screen_image(&post("a walk in the park today"), &img, &QualityThresholds::default());
        assert!(v.flags.is_empty(), "{v:?}");
        assert!(!v.scores.contains_key(&QualityFlag::Background));
        assert_eq!(v.scores[&QualityFlag::OcrSubtitle], 0.0);
    }

    #[test]
    fn large_skin_region_with_quote_is_portrait() {
        let img = RgbImage::from_fn(96, 96, |x, y| {
            if (24..72).contains(&x) && (16..80).contains(&y) {
                Rgb([224, 172, 140])
            } else {
                Rgb([30, 90, 160])
            }
        });
        let img = DynamicImage::ImageRgb8(img);
        let quoted = post("\"never give up\" she said");
        let v = screen_image(&quoted, &img, &QualityThresholds::default());
        assert!(v.flags.contains(&QualityFlag::Portrait), "{v:?}");
        let plain = post("no quotes in here at all");
        let face_only = screen_image(&plain, &img, &QualityThresholds::default());
        assert!(face_only.scores[&QualityFlag::Portrait] < v.scores[&QualityFlag::Portrait]);
    }

    #[test]
    fn screening_is_pure() {
        let img = text_image(64, 64, 32);
        let thr = QualityThresholds::default();
        assert_eq!(screen_image(&post("x"), &img, &thr), screen_image(&post("x"), &img, &thr));
    }

    #[test]
    fn undecodable_image_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(
            quality_screen(&post("x"), &p, &QualityThresholds::default()),
            Err(Error::ImageDecode { .. })
        ));
    }
}
