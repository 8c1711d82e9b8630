//! Reference distance functions over small image patches.
//!
//! The SSIM variant is single-scale with 8x8 uniform windows at stride 1,
//! computed on the equal-weight channel mean. It is a demo provider and will
//! not match Gaussian-window implementations.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Row-major, interleaved pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImagePatch {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Input(format!("empty patch {width}x{height}x{channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Input(format!(
                "patch {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn gray(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Equal-weight mean over channels.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    fn check_shape(&self, other: &ImagePatch) -> Result<()> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(Error::Input(format!(
                "patch shapes differ: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Ssim,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Ssim => "ssim",
        }
    }

    /// Human-readable description written into output metadata.
    pub fn description(self) -> &'static str {
        match self {
            Metric::Euclidean => "root-mean-square pixel difference over all channels",
            Metric::Ssim => {
                "1 - mean SSIM, single scale, 8x8 uniform windows, stride 1, \
                 channel-mean grayscale, C1 = 0.01^2, C2 = 0.03^2"
            }
        }
    }

    pub fn distance(self, a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
        match self {
            Metric::Euclidean => euclidean_distance(a, b),
            Metric::Ssim => ssim_distance(a, b),
        }
    }
}

/// Root-mean-square pixel difference.
pub fn euclidean_distance(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    a.check_shape(b)?;
    let sq: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / a.pixels.len() as f64).sqrt())
}

/// Summed-area table with a zero first row and column.
fn integral(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let stride = width + 1;
    let mut table = vec![0.0; stride * (height + 1)];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += values[y * width + x];
            table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
        }
    }
    table
}

fn window_sum(table: &[f64], width: usize, x: usize, y: usize, size: usize) -> f64 {
    let stride = width + 1;
    let at = |xx: usize, yy: usize| table[yy * stride + xx];
    at(x + size, y + size) - at(x, y + size) - at(x + size, y) + at(x, y)
}

fn ssim_index(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Mean local SSIM index over all 8x8 windows.
pub fn mean_ssim(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    a.check_shape(b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "SSIM needs patches of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let x = a.luma();
    let y = b.luma();
    let sq = |v: &[f64]| v.iter().map(|p| p * p).collect::<Vec<_>>();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let tables = [
        integral(&x, w, h),
        integral(&y, w, h),
        integral(&sq(&x), w, h),
        integral(&sq(&y), w, h),
        integral(&xy, w, h),
    ];
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    for wy in 0..=h - SSIM_WINDOW {
        for wx in 0..=w - SSIM_WINDOW {
            let [sx, sy, sxx, syy, sxy] = [0, 1, 2, 3, 4].map(|t| window_sum(&tables[t], w, wx, wy, SSIM_WINDOW) / n);
            total += ssim_index(sx, sy, sxx - sx * sx, syy - sy * sy, sxy - sx * sy);
        }
    }
    Ok(total / ((w - SSIM_WINDOW + 1) * (h - SSIM_WINDOW + 1)) as f64)
}

/// `1 - mean SSIM`, in `[0, 2]`.
pub fn ssim_distance(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    Ok((1.0 - mean_ssim(a, b)?).max(0.0))
}

/// `(metric(ref, x0), metric(ref, x1))`.
pub fn triplet_distances(
    reference: &ImagePatch,
    x0: &ImagePatch,
    x1: &ImagePatch,
    metric: Metric,
) -> Result<(f64, f64)> {
    x0.check_shape(x1)?;
    Ok((metric.distance(reference, x0)?, metric.distance(reference, x1)?))
}

/// Loads a patch from a binary PGM/PPM file, or from a CSV of grayscale rows
/// when the extension is `.csv`.
pub fn load_patch(path: impl AsRef<Path>) -> Result<ImagePatch> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        return read_csv_patch(file);
    }
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let patch = if img.color().has_color() {
        let rgb = img.to_rgb8();
        ImagePatch::new(w, h, 3, rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
    } else {
        let gray = img.to_luma8();
        ImagePatch::gray(w, h, gray.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
    };
    patch
}

/// One row of comma-separated values in `[0, 1]` per image row, no header.
pub fn read_csv_patch<R: std::io::Read>(reader: R) -> Result<ImagePatch> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut pixels = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 1,
            message: e.to_string(),
        })?;
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                row: row + 1,
                message: format!("expected {} values, got {}", width.unwrap_or(0), rec.len()),
            });
        }
        for field in rec.iter() {
            pixels.push(field.parse::<f64>().map_err(|e| Error::Parse {
                row: row + 1,
                message: format!("bad pixel `{field}`: {e}"),
            })?);
        }
        height += 1;
    }
    ImagePatch::gray(width.unwrap_or(0), height, pixels)
}
