//! Dense correspondence images: PNCC plus offset, their validity semantics,
//! point-cloud assembly and a seeded degradation model.

mod pfm;

pub use pfm::{read_maps, read_pfm, write_maps, write_pfm, OFFSET_SUFFIX, PNCC_SUFFIX};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::NccTransform;

/// Pixels whose PNCC norm is below this are background.
pub const DEFAULT_VALID_EPS: f32 = 0.05;
/// Slack around the `[0.1, 1.0]` code range allowed at valid pixels.
pub const PNCC_RANGE_TOL: f32 = 0.02;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image must be non-empty, got {0}x{1}")]
    Empty(usize, usize),
    #[error("non-finite value at pixel ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("PNCC value {value:?} at pixel ({u}, {v}) outside the normalized code range")]
    OutOfRange { u: usize, v: usize, value: [f32; 3] },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed PFM: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Three-channel `f32` image, row-major, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage3 {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl FloatImage3 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty(width, height));
        }
        if data.len() != width * height {
            return Err(ImageError::InvalidParameter(format!(
                "{} pixels supplied for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(ImageError::NonFinite(i % width, i / width));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [[f32; 3]] {
        &mut self.data
    }

    pub fn get(&self, u: usize, v: usize) -> [f32; 3] {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: [f32; 3]) {
        self.data[v * self.width + u] = value;
    }

    /// Copies the window `[x0, x0+w) × [y0, y0+h)`; the window must fit.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut data = Vec::with_capacity(w * h);
        for v in y0..y0 + h {
            data.extend_from_slice(&self.data[v * self.width + x0..v * self.width + x0 + w]);
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }
}

/// Per-pixel validity, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl ValidMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// PNCC image and offset image of the same size.
///
/// A pixel is valid when `‖pncc‖₂ ≥ valid_eps`; the background sentinel is
/// exact zero in both maps when rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMaps {
    pub pncc: FloatImage3,
    pub offset: FloatImage3,
    pub valid_eps: f32,
}

impl CorrespondenceMaps {
    pub fn new(pncc: FloatImage3, offset: FloatImage3) -> Result<Self, ImageError> {
        if pncc.width != offset.width || pncc.height != offset.height {
            return Err(ImageError::DimensionMismatch(
                pncc.width,
                pncc.height,
                offset.width,
                offset.height,
            ));
        }
        Ok(Self {
            pncc,
            offset,
            valid_eps: DEFAULT_VALID_EPS,
        })
    }

    pub fn with_valid_eps(mut self, valid_eps: f32) -> Self {
        self.valid_eps = valid_eps;
        self
    }

    pub fn width(&self) -> usize {
        self.pncc.width
    }

    pub fn height(&self) -> usize {
        self.pncc.height
    }

    pub fn is_valid_index(&self, i: usize) -> bool {
        pixel_is_valid(&self.pncc.data[i], self.valid_eps)
    }

    pub fn valid_mask(&self) -> ValidMask {
        ValidMask {
            width: self.width(),
            height: self.height(),
            bits: (0..self.pncc.data.len()).map(|i| self.is_valid_index(i)).collect(),
        }
    }

    /// Row-major indices of valid pixels.
    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.pncc.data.len()).filter(|&i| self.is_valid_index(i)).collect()
    }

    /// Checks that every valid PNCC value lies in `[0.1 − tol, 1.0 + tol]³`.
    pub fn check_code_range(&self) -> Result<(), ImageError> {
        let lo = NccTransform::LOW as f32 - PNCC_RANGE_TOL;
        let hi = NccTransform::HIGH as f32 + PNCC_RANGE_TOL;
        for i in self.valid_indices() {
            let p = self.pncc.data[i];
            if p.iter().any(|c| *c < lo || *c > hi) {
                return Err(ImageError::OutOfRange {
                    u: i % self.width(),
                    v: i / self.width(),
                    value: p,
                });
            }
        }
        Ok(())
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self {
            pncc: self.pncc.crop(x0, y0, w, h),
            offset: self.offset.crop(x0, y0, w, h),
            valid_eps: self.valid_eps,
        }
    }
}

fn pixel_is_valid(p: &[f32; 3], eps: f32) -> bool {
    let n2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    n2.sqrt() >= eps
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    /// Column and row of the source pixel.
    pub pixel: (usize, usize),
    /// `denormalize(pncc) + offset`, in model units.
    pub position: Vector3<f64>,
    pub color: Option<[u8; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

/// One point per valid pixel: the mean-face point named by the PNCC value
/// plus the predicted offset.
pub fn assemble_point_cloud(maps: &CorrespondenceMaps, ncc: &NccTransform) -> PointCloud {
    let w = maps.width();
    let points = maps
        .valid_indices()
        .into_iter()
        .map(|i| {
            let code = to_vec3(maps.pncc.data[i]);
            let offset = to_vec3(maps.offset.data[i]);
            CloudPoint {
                pixel: (i % w, i / w),
                position: ncc.denormalize(&code) + offset,
                color: None,
            }
        })
        .collect();
    PointCloud { points }
}

pub fn to_vec3(p: [f32; 3]) -> Vector3<f64> {
    Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

/// Noise and hole parameters for [`degrade_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    /// Gaussian noise on PNCC channels, in code units.
    pub pncc_sigma: f32,
    /// Gaussian noise on offset channels, in model units.
    pub offset_sigma: f32,
    /// Probability that a valid pixel is knocked out to the sentinel.
    pub hole_fraction: f32,
}

/// Network-error surrogate with one noise level for both maps.
pub fn degrade(
    maps: &CorrespondenceMaps,
    noise_sigma: f32,
    hole_fraction: f32,
    seed: u64,
) -> Result<CorrespondenceMaps, ImageError> {
    degrade_with(
        maps,
        &Degradation {
            pncc_sigma: noise_sigma,
            offset_sigma: noise_sigma,
            hole_fraction,
        },
        seed,
    )
}

pub fn degrade_with(
    maps: &CorrespondenceMaps,
    params: &Degradation,
    seed: u64,
) -> Result<CorrespondenceMaps, ImageError> {
    if !(0.0..1.0).contains(&params.hole_fraction) {
        return Err(ImageError::InvalidParameter(format!(
            "hole fraction {} outside [0, 1)",
            params.hole_fraction
        )));
    }
    if !(params.pncc_sigma >= 0.0 && params.offset_sigma >= 0.0) {
        return Err(ImageError::InvalidParameter("noise sigma must be non-negative".into()));
    }
    let mut out = maps.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in maps.valid_indices() {
        if params.hole_fraction > 0.0 && rng.random::<f32>() < params.hole_fraction {
            out.pncc.data[i] = [0.0; 3];
            out.offset.data[i] = [0.0; 3];
            continue;
        }
        if params.pncc_sigma > 0.0 {
            for c in &mut out.pncc.data[i] {
                *c += params.pncc_sigma * rng.sample::<f32, _>(StandardNormal);
            }
        }
        if params.offset_sigma > 0.0 {
            for c in &mut out.offset.data[i] {
                *c += params.offset_sigma * rng.sample::<f32, _>(StandardNormal);
            }
        }
    }
    Ok(out)
}
