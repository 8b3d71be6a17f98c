use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;

use super::{keyed_rng, EncoderBackend};
use crate::error::{Error, Result};
use crate::nn::{uniform, Linear, Matrix, Parameters};

/// Backbone output reduced to an `M x M` grid and flattened row-major to
/// `M^2 x C`, before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub regions: Matrix,
    pub grid: usize,
}

impl RegionFeatures {
    pub fn channels(&self) -> usize {
        self.regions.ncols()
    }
}

/// Region features projected to the text hidden size: `M^2 x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub regions: Matrix,
    pub grid: usize,
}

const STUB_CELL: u32 = 8;
const STUB_STATS: usize = 7;

/// Convolutional backbone stand-in. The stub summarises each 8x8 pixel cell
/// (mean RGB, luminance spread, gradient energy) and lifts the summary to
/// `channels` features through a fixed seeded mixing matrix and `tanh`.
#[derive(Debug, Clone)]
pub struct ImageBackbone {
    pub backend: EncoderBackend,
    pub channels: usize,
    mix: Option<Matrix>,
}

impl ImageBackbone {
    pub fn new(backend: EncoderBackend, channels: usize) -> Self {
        let mix = match &backend {
            EncoderBackend::Stub { seed } => {
                let mut rng = keyed_rng(*seed, "image-stub", &(channels as u64).to_le_bytes());
                Some(uniform(&mut rng, STUB_STATS, channels, 2.0))
            }
            EncoderBackend::Pretrained { .. } => None,
        };
        ImageBackbone {
            backend,
            channels,
            mix,
        }
    }

    /// Native-resolution feature map, `channels x rows x cols`.
    pub fn feature_map(&self, img: &image::DynamicImage) -> Result<Array3<f64>> {
        let Some(mix) = &self.mix else {
            return Err(Error::BackendUnavailable(self.backend.to_string()));
        };
        let stats = cell_statistics(img);
        let (_, rows, cols) = stats.dim();
        let mut map = Array3::zeros((self.channels, rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                let s = stats.slice(ndarray::s![.., r, c]);
                let feat = s.dot(mix);
                for (ch, v) in feat.iter().enumerate() {
                    map[[ch, r, c]] = v.tanh();
                }
            }
        }
        Ok(map)
    }
}

fn cell_statistics(img: &image::DynamicImage) -> Array3<f64> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let cols = w.div_ceil(STUB_CELL).max(1) as usize;
    let rows = h.div_ceil(STUB_CELL).max(1) as usize;
    let lum = |x: u32, y: u32| {
        let p = rgb.get_pixel(x, y);
        (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
    };
    let mut out = Array3::zeros((STUB_STATS, rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let x0 = c as u32 * STUB_CELL;
            let y0 = r as u32 * STUB_CELL;
            let x1 = (x0 + STUB_CELL).min(w);
            let y1 = (y0 + STUB_CELL).min(h);
            let mut acc = [0.0f64; 6];
            let mut lum_sq = 0.0;
            let mut n = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = rgb.get_pixel(x, y);
                    let l = lum(x, y);
                    acc[0] += p[0] as f64 / 255.0;
                    acc[1] += p[1] as f64 / 255.0;
                    acc[2] += p[2] as f64 / 255.0;
                    acc[3] += l;
                    lum_sq += l * l;
                    if x + 1 < w {
                        acc[4] += (lum(x + 1, y) - l).abs();
                    }
                    if y + 1 < h {
                        acc[5] += (lum(x, y + 1) - l).abs();
                    }
                    n += 1.0;
                }
            }
            if n == 0.0 {
                continue;
            }
            let mean_l = acc[3] / n;
            let stats = [
                acc[0] / n,
                acc[1] / n,
                acc[2] / n,
                (lum_sq / n - mean_l * mean_l).max(0.0).sqrt(),
                acc[4] / n,
                acc[5] / n,
                1.0,
            ];
            for (k, v) in stats.into_iter().enumerate() {
                out[[k, r, c]] = v;
            }
        }
    }
    out
}

/// Adaptive average pooling of a `C x H x W` map to `M x M`, flattened
/// row-major to `M^2 x C`. Window `i` spans `floor(i*H/M) .. ceil((i+1)*H/M)`,
/// so maps smaller than the grid are replicated rather than rejected.
pub fn adaptive_avg_pool(map: &Array3<f64>, grid: usize) -> Matrix {
    let (channels, h, w) = map.dim();
    let mut out = Array2::zeros((grid * grid, channels));
    for i in 0..grid {
        let (r0, r1) = (i * h / grid, ((i + 1) * h).div_ceil(grid));
        for j in 0..grid {
            let (c0, c1) = (j * w / grid, ((j + 1) * w).div_ceil(grid));
            let window = map.slice(ndarray::s![.., r0..r1, c0..c1]);
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            for ch in 0..channels {
                out[[i * grid + j, ch]] = window.index_axis(ndarray::Axis(0), ch).sum() / n;
            }
        }
    }
    out
}

/// Affine map from backbone channels to the text hidden size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProjection {
    pub linear: Linear,
}

impl ImageProjection {
    /// Small uniform initialisation, `U(-1/sqrt(C), 1/sqrt(C))`.
    pub fn new(rng: &mut impl Rng, channels: usize, dim: usize) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        ImageProjection {
            linear: Linear::new(uniform(rng, channels, dim, bound), Array2::zeros((1, dim))),
        }
    }

    pub fn project(&self, raw: &RegionFeatures) -> ImageFeatures {
        ImageFeatures {
            regions: self.linear.forward(raw.regions.view()),
            grid: raw.grid,
        }
    }

    /// The bias-free part of the projection.
    pub fn project_linear(&self, x: ArrayView2<f64>) -> Matrix {
        x.dot(&self.linear.weight)
    }

    pub fn zeros_like(&self) -> Self {
        ImageProjection {
            linear: self.linear.zeros_like(),
        }
    }
}

impl Parameters for ImageProjection {
    fn params(&self) -> Vec<(String, &Matrix)> {
        self.linear.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.linear.params_mut()
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub backbone: ImageBackbone,
    pub grid: usize,
    /// Upper bound on `M^2 * max(C, d)` elements per image.
    pub memory_cap: usize,
}

impl ImageEncoder {
    pub fn new(backbone: ImageBackbone, grid: usize, memory_cap: usize) -> Self {
        ImageEncoder {
            backbone,
            grid,
            memory_cap,
        }
    }

    fn check_cap(&self, width: usize) -> Result<()> {
        let requested = self.grid.saturating_mul(self.grid).saturating_mul(width);
        if requested > self.memory_cap {
            return Err(Error::MemoryCap {
                requested,
                cap: self.memory_cap,
            });
        }
        Ok(())
    }

    pub fn regions_from_image(&self, img: &image::DynamicImage) -> Result<RegionFeatures> {
        if self.grid == 0 {
            return Err(Error::Config("grid size M must be at least 1".into()));
        }
        self.check_cap(self.backbone.channels)?;
        let map = self.backbone.feature_map(img)?;
        Ok(RegionFeatures {
            regions: adaptive_avg_pool(&map, self.grid),
            grid: self.grid,
        })
    }

    pub fn regions(&self, path: &Path) -> Result<RegionFeatures> {
        if let EncoderBackend::Pretrained { identifier } = &self.backbone.backend {
            return Err(Error::BackendUnavailable(identifier.clone()));
        }
        let img = image::open(path).map_err(|e| Error::ImageDecode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        self.regions_from_image(&img)
    }

    pub fn encode_image(&self, path: &Path, projection: &ImageProjection) -> Result<ImageFeatures> {
        self.check_cap(projection.linear.d_out())?;
        let raw = self.regions(path)?;
        if raw.channels() != projection.linear.d_in() {
            return Err(Error::Shape(format!(
                "backbone yields {} channels, projection expects {}",
                raw.channels(),
                projection.linear.d_in()
            )));
        }
        Ok(projection.project(&raw))
    }
}
