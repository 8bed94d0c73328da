//! Environmental images around a Tx-Rx link in three organisations.
//!
//! * `Resize`: fixed square image, Tx-Rx axis along the lower-left to
//!   upper-right diagonal, separation 3/5 of the diagonal.
//! * `Stacksize`: two axis-aligned native-resolution patches at Tx and Rx,
//!   stacked along channels.
//! * `Fullsize`: a fixed-height strip at 1 m/px whose width is the link
//!   length plus the strip height.
//!
//! Images are stored channel-major (`C x H x W`). Pixel coordinates in
//! [`ImageMeta`] put pixel centres on integers, row 0 at the top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{extract_patch, GeoRef, RasterError, RasterGrid, Scene};
use crate::synth::LinkSample;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("degenerate link: distance {0} m")]
    DegenerateLink(f64),
    #[error("bad normalisation stats: {0}")]
    BadStats(String),
    #[error("bad imaging config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    Resize,
    Stacksize,
    Fullsize,
}

impl ImageFormat {
    pub const ALL: [ImageFormat; 3] = [ImageFormat::Resize, ImageFormat::Stacksize, ImageFormat::Fullsize];

    pub fn channels(self) -> usize {
        match self {
            ImageFormat::Stacksize => 8,
            _ => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImageFormat::Resize => "resize",
            ImageFormat::Stacksize => "stacksize",
            ImageFormat::Fullsize => "fullsize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    pub resize_px: usize,
    pub stack_px: usize,
    pub stack_pixel_m: f64,
    pub full_height_px: usize,
    pub full_pixel_m: f64,
    /// Integer block-average factor applied after construction (1 = off).
    pub downscale: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            resize_px: 256,
            stack_px: 256,
            stack_pixel_m: 1.0,
            full_height_px: 160,
            full_pixel_m: 1.0,
            downscale: 1,
        }
    }
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resize_px < 2 || self.stack_px < 1 || self.full_height_px < 2 || self.downscale < 1 {
            return Err(ImagingError::BadConfig(format!("{self:?}")));
        }
        if !(self.stack_pixel_m > 0.0) || !(self.full_pixel_m > 0.0) {
            return Err(ImagingError::BadConfig("pixel sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Similarity transform between image pixels and world metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelFrame {
    pub anchor_px: (f64, f64),
    pub anchor_world: (f64, f64),
    pub scale: f64,
    /// Rotation from the image frame (x right, y up) to world (east, north).
    pub angle: f64,
}

impl PixelFrame {
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        let (vx, vy) = (col - self.anchor_px.0, self.anchor_px.1 - row);
        let (s, c) = self.angle.sin_cos();
        (
            self.anchor_world.0 + self.scale * (c * vx - s * vy),
            self.anchor_world.1 + self.scale * (s * vx + c * vy),
        )
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = ((x - self.anchor_world.0) / self.scale, (y - self.anchor_world.1) / self.scale);
        let (s, c) = self.angle.sin_cos();
        let (vx, vy) = (c * dx + s * dy, -s * dx + c * dy);
        (self.anchor_px.0 + vx, self.anchor_px.1 - vy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub scale_m_per_px: f64,
    pub tx_px: (f64, f64),
    pub rx_px: (f64, f64),
    pub frame: Option<PixelFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvImage {
    pub format: ImageFormat,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub meta: ImageMeta,
}

impl EnvImage {
    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Copies the image into a `.plrg` raster (pixel-interleaved) for inspection.
    pub fn to_raster(&self) -> Result<RasterGrid> {
        let g = GeoRef::new(0.0, self.height as f64 * self.meta.scale_m_per_px, self.meta.scale_m_per_px, self.width, self.height)?;
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in 0..self.width {
                for ch in 0..self.channels {
                    data.push(self.at(ch, r, c));
                }
            }
        }
        Ok(RasterGrid::new(g, self.channels, data)?)
    }
}

fn horizontal_heading(sample: &LinkSample) -> f64 {
    let (dx, dy) = (sample.rx.x - sample.tx.x, sample.rx.y - sample.tx.y);
    if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        dy.atan2(dx)
    }
}

fn render(scene: &Scene, frame: &PixelFrame, height: usize, width: usize) -> Vec<f32> {
    let plane = height * width;
    let mut data = vec![0.0f32; plane * 4];
    let mut px = [0.0f32; 4];
    for r in 0..height {
        for c in 0..width {
            let (x, y) = frame.pixel_to_world(c as f64, r as f64);
            scene.sample_env(x, y, &mut px);
            let i = r * width + c;
            for (ch, v) in px.iter().enumerate() {
                data[ch * plane + i] = *v;
            }
        }
    }
    data
}

/// Square image of `size` px with Tx and Rx on the rising diagonal, each
/// (1/5) of the pixel-centre diagonal in from its corner.
pub fn make_resize(scene: &Scene, sample: &LinkSample, size: usize) -> Result<EnvImage> {
    if !(sample.d3d_m > 0.0) {
        return Err(ImagingError::DegenerateLink(sample.d3d_m));
    }
    let span = (size - 1) as f64;
    let diagonal = span * std::f64::consts::SQRT_2;
    let scale = sample.d3d_m / (0.6 * diagonal);
    let tx_px = (0.2 * span, 0.8 * span);
    let rx_px = (0.8 * span, 0.2 * span);
    let frame = PixelFrame {
        anchor_px: tx_px,
        anchor_world: (sample.tx.x, sample.tx.y),
        scale,
        angle: horizontal_heading(sample) - std::f64::consts::FRAC_PI_4,
    };
    Ok(EnvImage {
        format: ImageFormat::Resize,
        channels: 4,
        height: size,
        width: size,
        data: render(scene, &frame, size, size),
        meta: ImageMeta { scale_m_per_px: scale, tx_px, rx_px, frame: Some(frame) },
    })
}

/// Tx patch (channels 0-3) and Rx patch (channels 4-7), axis-aligned.
pub fn make_stacksize(scene: &Scene, sample: &LinkSample, size: usize, pixel_m: f64) -> Result<EnvImage> {
    let plane = size * size;
    let mut data = vec![0.0f32; plane * 8];
    for (k, p) in [(sample.tx.x, sample.tx.y), (sample.rx.x, sample.rx.y)].iter().enumerate() {
        let patch = extract_patch(scene, *p, size, pixel_m)?;
        for (i, px) in patch.data.chunks_exact(4).enumerate() {
            for (ch, v) in px.iter().enumerate() {
                data[(4 * k + ch) * plane + i] = *v;
            }
        }
    }
    let centre = ((size - 1) as f64 / 2.0, (size - 1) as f64 / 2.0);
    Ok(EnvImage {
        format: ImageFormat::Stacksize,
        channels: 8,
        height: size,
        width: size,
        data,
        meta: ImageMeta { scale_m_per_px: pixel_m, tx_px: centre, rx_px: centre, frame: None },
    })
}

/// Strip of `height` px; width is the link length in pixels plus `height`.
pub fn make_fullsize(scene: &Scene, sample: &LinkSample, height: usize, pixel_m: f64) -> Result<EnvImage> {
    if !(sample.d3d_m > 0.0) {
        return Err(ImagingError::DegenerateLink(sample.d3d_m));
    }
    let margin = (height / 2) as f64;
    let width = (sample.d3d_m / pixel_m).round() as usize + height;
    let tx_px = (margin, margin);
    let rx_px = (width as f64 - margin, margin);
    let frame = PixelFrame {
        anchor_px: tx_px,
        anchor_world: (sample.tx.x, sample.tx.y),
        scale: pixel_m,
        angle: horizontal_heading(sample),
    };
    Ok(EnvImage {
        format: ImageFormat::Fullsize,
        channels: 4,
        height,
        width,
        data: render(scene, &frame, height, width),
        meta: ImageMeta { scale_m_per_px: pixel_m, tx_px, rx_px, frame: Some(frame) },
    })
}

/// Block-average by an integer factor; trailing partial blocks are dropped.
pub fn downscale(image: &EnvImage, factor: usize) -> EnvImage {
    if factor <= 1 {
        return image.clone();
    }
    let (h, w) = ((image.height / factor).max(1), (image.width / factor).max(1));
    let (fh, fw) = (factor.min(image.height), factor.min(image.width));
    let mut data = vec![0.0f32; image.channels * h * w];
    let norm = 1.0 / (fh * fw) as f64;
    for ch in 0..image.channels {
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0f64;
                for dr in 0..fh {
                    for dc in 0..fw {
                        acc += image.at(ch, r * factor + dr, c * factor + dc) as f64;
                    }
                }
                data[(ch * h + r) * w + c] = (acc * norm) as f32;
            }
        }
    }
    let k = factor as f64;
    let map = |p: (f64, f64)| ((p.0 + 0.5) / k - 0.5, (p.1 + 0.5) / k - 0.5);
    let frame = image.meta.frame.map(|f| PixelFrame {
        anchor_px: map(f.anchor_px),
        scale: f.scale * k,
        ..f
    });
    EnvImage {
        data,
        height: h,
        width: w,
        meta: ImageMeta {
            scale_m_per_px: image.meta.scale_m_per_px * k,
            tx_px: map(image.meta.tx_px),
            rx_px: map(image.meta.rx_px),
            frame,
        },
        ..image.clone()
    }
}

/// Builds the requested organisation, then applies the configured downscale.
pub fn build_image(format: ImageFormat, scene: &Scene, sample: &LinkSample, cfg: &ImagingConfig) -> Result<EnvImage> {
    let img = match format {
        ImageFormat::Resize => make_resize(scene, sample, cfg.resize_px)?,
        ImageFormat::Stacksize => make_stacksize(scene, sample, cfg.stack_px, cfg.stack_pixel_m)?,
        ImageFormat::Fullsize => make_fullsize(scene, sample, cfg.full_height_px, cfg.full_pixel_m)?,
    };
    Ok(if cfg.downscale > 1 { downscale(&img, cfg.downscale) } else { img })
}

/// Per-channel Z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population moments over every pixel of every image.
    pub fn compute<'a>(images: impl IntoIterator<Item = &'a EnvImage>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for img in images {
            if sum.is_empty() {
                sum = vec![0.0; img.channels];
                sq = vec![0.0; img.channels];
            } else if sum.len() != img.channels {
                return Err(ImagingError::BadStats(format!("mixed channel counts {} and {}", sum.len(), img.channels)));
            }
            for ch in 0..img.channels {
                for v in img.plane(ch) {
                    let v = *v as f64;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            count += img.height * img.width;
        }
        if count == 0 {
            return Err(ImagingError::BadStats("no images".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        ChannelStats { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `(x - mean) / std` per channel; channels with zero spread are only centred.
pub fn standardize(image: &EnvImage, stats: &ChannelStats) -> Result<EnvImage> {
    let mut out = image.clone();
    standardize_in_place(&mut out, stats)?;
    Ok(out)
}

pub fn standardize_in_place(image: &mut EnvImage, stats: &ChannelStats) -> Result<()> {
    if stats.mean.len() != image.channels || stats.std.len() != image.channels {
        return Err(ImagingError::BadStats(format!(
            "stats for {} channels, image has {}",
            stats.mean.len(),
            image.channels
        )));
    }
    let plane = image.height * image.width;
    for ch in 0..image.channels {
        let m = stats.mean[ch];
        let s = if stats.std[ch] > 1e-12 { stats.std[ch] } else { 1.0 };
        for v in &mut image.data[ch * plane..(ch + 1) * plane] {
            *v = ((*v as f64 - m) / s) as f32;
        }
    }
    Ok(())
}
