//! Volumes, the BVOL container, percentile normalisation and resampling.
//!
//! BVOL layout: the ASCII magic `BVOL1`, three little-endian `u32` dims
//! (depth, height, width), then `depth*height*width` little-endian `f32`
//! voxels in row-major order with width fastest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"BVOL1";
const HEADER_LEN: usize = MAGIC.len() + 12;

/// Grid dimensions as (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.width;
        let y = (i / self.width) % self.height;
        let z = i / (self.width * self.height);
        (z, y, x)
    }
}

/// Single-channel scalar grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, voxels: Vec<f32>) -> Result<Self> {
        if voxels.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} voxels for dims {}x{}x{}",
                voxels.len(),
                dims.depth,
                dims.height,
                dims.width
            )));
        }
        Ok(Self { dims, voxels })
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            voxels: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut voxels = Vec::with_capacity(dims.len());
        for z in 0..dims.depth {
            for y in 0..dims.height {
                for x in 0..dims.width {
                    voxels.push(f(z, y, x));
                }
            }
        }
        Self { dims, voxels }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.dims.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f32) {
        let i = self.dims.index(z, y, x);
        self.voxels[i] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims,
            voxels: self.voxels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Encodes to BVOL bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(MAGIC);
        for d in [self.dims.depth, self.dims.height, self.dims.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes BVOL bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let dim = |i: usize| {
            let off = MAGIC.len() + 4 * i;
            u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
        };
        let (d, h, w) = (dim(0), dim(1), dim(2));
        let count = (d as u64)
            .checked_mul(h as u64)
            .and_then(|n| n.checked_mul(w as u64))
            .and_then(|n| n.checked_mul(4))
            .filter(|n| *n <= isize::MAX as u64)
            .ok_or(Error::DimensionOverflow(d, h, w))?;
        let expected = HEADER_LEN + count as usize;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let voxels = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            dims: Dims::new(d as usize, h as usize, w as usize),
            voxels,
        })
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    Volume::from_bytes(&fs::read(path)?)
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&volume.to_bytes())?;
    Ok(())
}

/// Linear-interpolation percentile, `q` in [0, 100].
pub fn percentile(values: &[f32], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Domain(format!("percentile {q} outside [0, 100]")));
    }
    let mut sorted: Vec<f32> = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    Ok(percentile_sorted(&sorted, q))
}

pub(crate) fn percentile_sorted(sorted: &[f32], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    let a = sorted[lo] as f64;
    let b = sorted[hi] as f64;
    a + (b - a) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Lower clip percentile in [0, 100].
    pub clip_low_percentile: f64,
    pub clip_high_percentile: f64,
    pub target_dims: Dims,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clip_low_percentile: 1.0,
            clip_high_percentile: 99.0,
            target_dims: Dims::new(64, 128, 128),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_low_percentile < self.clip_high_percentile) {
            return Err(Error::Config(format!(
                "clip_low {} must be below clip_high {}",
                self.clip_low_percentile, self.clip_high_percentile
            )));
        }
        if self.clip_low_percentile < 0.0 || self.clip_high_percentile > 100.0 {
            return Err(Error::Config("clip percentiles must lie in [0, 100]".into()));
        }
        if self.target_dims.is_empty() {
            return Err(Error::Config("target dims must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Clips to the configured percentiles, rescales to [0, 1] and resamples.
pub fn preprocess_volume(raw: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    cfg.validate()?;
    let normalized = normalize_intensity(raw, cfg.clip_low_percentile, cfg.clip_high_percentile)?;
    let mut out = resample_trilinear(&normalized, cfg.target_dims)?;
    // Interpolation of values in [0, 1] stays there up to rounding.
    for v in out.voxels_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Percentile clipping followed by an affine map onto [0, 1].
pub fn normalize_intensity(raw: &Volume, low_q: f64, high_q: f64) -> Result<Volume> {
    let mut sorted = raw.voxels().to_vec();
    if sorted.is_empty() {
        return Err(Error::Domain("empty volume".into()));
    }
    sorted.sort_by(f32::total_cmp);
    let lo = percentile_sorted(&sorted, low_q);
    let hi = percentile_sorted(&sorted, high_q);
    if hi <= lo {
        return Ok(Volume::filled(raw.dims(), 0.0));
    }
    let span = hi - lo;
    Ok(raw.map(|v| ((v as f64).clamp(lo, hi) - lo) as f32 / span as f32))
}

fn axis_samples(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Align-corners trilinear resampling.
pub fn resample_trilinear(volume: &Volume, target: Dims) -> Result<Volume> {
    let src = volume.dims();
    if src.is_empty() || target.is_empty() {
        return Err(Error::Shape("resampling requires all dims >= 1".into()));
    }
    if src == target {
        return Ok(volume.clone());
    }
    let zs = axis_samples(src.depth, target.depth);
    let ys = axis_samples(src.height, target.height);
    let xs = axis_samples(src.width, target.width);
    let v = |z, y, x| volume.get(z, y, x) as f64;
    Ok(Volume::from_fn(target, |oz, oy, ox| {
        let (z0, z1, fz) = zs[oz];
        let (y0, y1, fy) = ys[oy];
        let (x0, x1, fx) = xs[ox];
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(v(z0, y0, x0), v(z0, y0, x1), fx);
        let c01 = lerp(v(z0, y1, x0), v(z0, y1, x1), fx);
        let c10 = lerp(v(z1, y0, x0), v(z1, y0, x1), fx);
        let c11 = lerp(v(z1, y1, x0), v(z1, y1, x1), fx);
        let c0 = lerp(c00, c01, fy);
        let c1 = lerp(c10, c11, fy);
        lerp(c0, c1, fz) as f32
    }))
}
