//! Attention heatmaps over image regions: numeric grids plus a coloured
//! overlay on the source image.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fusion::FusionOutput;
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFiles {
    pub head_grids: Vec<PathBuf>,
    pub mean_grid: PathBuf,
    pub overlay: PathBuf,
}

/// One head's `1 x M^2` weights as an `M x M` grid, row-major.
pub fn attention_grid(weights: &Matrix) -> Result<Matrix> {
    let cells = weights.len();
    let side = (cells as f64).sqrt().round() as usize;
    if side * side != cells || weights.nrows() != 1 {
        return Err(Error::Shape(format!(
            "attention weights {:?} do not form a square grid",
            weights.dim()
        )));
    }
    Ok(Array2::from_shape_vec((side, side), weights.iter().copied().collect()).expect("square"))
}

/// Element-wise mean over heads, accumulated in head order.
pub fn head_average(weights: &[Matrix]) -> Result<Matrix> {
    let first = weights.first().ok_or(Error::NoAttention)?;
    let mut sum = Array2::zeros(first.raw_dim());
    for w in weights {
        sum += w;
    }
    Ok(sum / weights.len() as f64)
}

/// Space-delimited rows; values use shortest round-trip formatting so the
/// file parses back to the exact weights.
pub fn format_grid(grid: &Matrix) -> String {
    let mut out = String::new();
    for row in grid.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

pub fn parse_grid(text: &str) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Shape(format!("bad grid value '{v}': {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged grid".into()));
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), rows.concat()).expect("checked shape"))
}

fn bilinear(grid: &Matrix, x: f64, y: f64) -> f64 {
    let (rows, cols) = grid.dim();
    let fx = (x - 0.5).clamp(0.0, (cols - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (rows - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(cols - 1), (y0 + 1).min(rows - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let top = grid[[y0, x0]] * (1.0 - tx) + grid[[y0, x1]] * tx;
    let bottom = grid[[y1, x0]] * (1.0 - tx) + grid[[y1, x1]] * tx;
    top * (1.0 - ty) + bottom * ty
}

fn heat_colour(t: f64) -> [f64; 3] {
    // blue -> cyan -> yellow -> red
    let t = t.clamp(0.0, 1.0);
    let r = (1.5 * t - 0.25).clamp(0.0, 1.0);
    let g = (1.0 - (2.0 * t - 1.0).abs() * 1.2).clamp(0.0, 1.0);
    let b = (1.0 - 1.5 * t).clamp(0.0, 1.0);
    [r * 255.0, g * 255.0, b * 255.0]
}

pub const OVERLAY_ALPHA: f64 = 0.45;

/// Upsamples the grid bilinearly to the image size, normalises it to the
/// grid's own range and alpha-blends a heat colour over the image. A
/// constant grid produces a uniform tint.
pub fn render_overlay(img: &DynamicImage, grid: &Matrix) -> RgbImage {
    let base = img.to_rgb8();
    let (w, h) = base.dimensions();
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let (rows, cols) = grid.dim();
    RgbImage::from_fn(w, h, |x, y| {
        let gx = (x as f64 + 0.5) * cols as f64 / w as f64;
        let gy = (y as f64 + 0.5) * rows as f64 / h as f64;
        let v = bilinear(grid, gx, gy);
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let c = heat_colour(t);
        let p = base.get_pixel(x, y);
        Rgb(std::array::from_fn(|k| {
            ((1.0 - OVERLAY_ALPHA) * p[k] as f64 + OVERLAY_ALPHA * c[k]).round() as u8
        }))
    })
}

/// Writes the head-averaged grid, optionally one grid per head, and an
/// overlay image into `out_dir`, named after `post_id`.
pub fn export_heatmap(
    post_id: &str,
    image_path: &Path,
    fusion_output: &FusionOutput,
    out_dir: &Path,
    per_head: bool,
) -> Result<HeatmapFiles> {
    if !fusion_output.strategy.has_attention() || fusion_output.image_attention.is_empty() {
        return Err(Error::NoAttention);
    }
    let img = image::open(image_path).map_err(|e| Error::ImageDecode {
        path: image_path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem: String = post_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let write = |name: String, grid: &Matrix| -> Result<PathBuf> {
        let path = out_dir.join(name);
        fs::write(&path, format_grid(grid)).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };

    let mut head_grids = Vec::new();
    if per_head {
        for (j, w) in fusion_output.image_attention.iter().enumerate() {
            head_grids.push(write(format!("{stem}_head{j}.txt"), &attention_grid(w)?)?);
        }
    }
    let mean = attention_grid(&head_average(&fusion_output.image_attention)?)?;
    let mean_grid = write(format!("{stem}_mean.txt"), &mean)?;
    let overlay = out_dir.join(format!("{stem}_overlay.png"));
    render_overlay(&img, &mean).save(&overlay)?;
    Ok(HeatmapFiles {
        head_grids,
        mean_grid,
        overlay,
    })
}
