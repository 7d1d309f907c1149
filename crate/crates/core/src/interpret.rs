//! Supervoxel LIME: a brain mask, 3D SLIC clustering and a weighted ridge
//! surrogate fitted to perturbed model scores.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Scalar;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::volume::{percentile, Dims, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub k_sv: usize,
    pub compactness: f64,
    pub fill: f32,
    pub kernel_width: f64,
    pub n_samples: usize,
    pub ridge_lambda: f64,
    pub mask_threshold: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            k_sv: 25,
            compactness: 0.2,
            fill: 0.0,
            kernel_width: 0.25,
            n_samples: 200,
            ridge_lambda: 1e-3,
            mask_threshold: 0.2,
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_sv == 0 || self.n_samples <= self.k_sv {
            return Err(Error::Config(format!(
                "need k_sv >= 1 and n_samples > k_sv (got {} and {})",
                self.k_sv, self.n_samples
            )));
        }
        if !(self.kernel_width > 0.0) || self.ridge_lambda < 0.0 || self.compactness < 0.0 {
            return Err(Error::Config("kernel width must be positive, lambda and compactness non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return Err(Error::Config("mask threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

const NEIGHBOURS: [(isize, isize, isize); 6] = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];

/// Connected components of `mask` under 6-connectivity, largest first.
fn components(mask: &[bool], dims: Dims) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = dims.coords(i);
            for (dz, dy, dx) in NEIGHBOURS {
                let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                if nz < 0 || ny < 0 || nx < 0 {
                    continue;
                }
                let (nz, ny, nx) = (nz as usize, ny as usize, nx as usize);
                if nz >= dims.depth || ny >= dims.height || nx >= dims.width {
                    continue;
                }
                let j = dims.index(nz, ny, nx);
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Voxels above `threshold_fraction` times the 99th percentile of non-zero
/// voxels, restricted to the largest 6-connected component, with enclosed
/// holes filled.
pub fn brain_mask(volume: &Volume, threshold_fraction: f64) -> Result<Vec<bool>> {
    let nonzero: Vec<f32> = volume.voxels().iter().copied().filter(|&v| v != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate("volume has no non-zero voxels".into()));
    }
    let cut = threshold_fraction * percentile(&nonzero, 99.0)?;
    let raw: Vec<bool> = volume.voxels().iter().map(|&v| v as f64 > cut).collect();
    let dims = volume.dims();
    let Some(largest) = components(&raw, dims).into_iter().next() else {
        return Err(Error::Degenerate("brain mask is empty".into()));
    };
    let mut mask = vec![false; raw.len()];
    for i in largest {
        mask[i] = true;
    }
    fill_holes(&mut mask, dims);
    Ok(mask)
}

/// Adds every unmasked voxel not 6-connected to the volume border.
fn fill_holes(mask: &mut [bool], dims: Dims) {
    let outside: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let on_border = |i: usize| {
        let (z, y, x) = dims.coords(i);
        z == 0 || y == 0 || x == 0 || z + 1 == dims.depth || y + 1 == dims.height || x + 1 == dims.width
    };
    for comp in components(&outside, dims) {
        if !comp.iter().any(|&i| on_border(i)) {
            for i in comp {
                mask[i] = true;
            }
        }
    }
}

/// Supervoxel labels: 0 outside the mask, 1..=k inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervoxelMap {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub k: usize,
    /// (z, y, x, intensity) per supervoxel, indexed by label - 1.
    pub centroids: Vec<[f64; 4]>,
}

impl SupervoxelMap {
    pub fn label_at(&self, z: usize, y: usize, x: usize) -> u32 {
        self.labels[self.dims.index(z, y, x)]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            if l > 0 {
                s[l as usize - 1] += 1;
            }
        }
        s
    }
}

fn grid_seeds(mask: &[bool], dims: Dims, k: usize, step: f64) -> Vec<usize> {
    let mut step = step.max(1e-3);
    loop {
        let mut cands = Vec::new();
        let count = |n: usize| ((n as f64 / step).floor() as usize).max(1);
        let (nz, ny, nx) = (count(dims.depth), count(dims.height), count(dims.width));
        let at = |i: usize, n: usize, len: usize| (((i as f64 + 0.5) * len as f64 / n as f64) as usize).min(len - 1);
        for a in 0..nz {
            for b in 0..ny {
                for c in 0..nx {
                    let idx = dims.index(at(a, nz, dims.depth), at(b, ny, dims.height), at(c, nx, dims.width));
                    if mask[idx] {
                        cands.push(idx);
                    }
                }
            }
        }
        cands.dedup();
        if cands.len() >= k {
            return (0..k).map(|j| cands[j * cands.len() / k]).collect();
        }
        if nz == dims.depth && ny == dims.height && nx == dims.width {
            // Every voxel is a grid point; fall back to masked voxels in order.
            let all: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            return (0..k).map(|j| all[j * all.len() / k]).collect();
        }
        step *= 0.9;
    }
}

/// 3D SLIC over the masked voxels.
pub fn slic_supervoxels(volume: &Volume, mask: &[bool], k_sv: usize, compactness: f64) -> Result<SupervoxelMap> {
    let dims = volume.dims();
    if mask.len() != dims.len() {
        return Err(Error::Shape("mask size differs from volume".into()));
    }
    let n_mask = mask.iter().filter(|&&m| m).count();
    if n_mask == 0 {
        return Err(Error::Degenerate("empty mask".into()));
    }
    if k_sv == 0 || k_sv > n_mask {
        return Err(Error::Config(format!("k_sv = {k_sv} invalid for {n_mask} masked voxels")));
    }
    let s = (n_mask as f64 / k_sv as f64).cbrt();
    let ratio = (compactness / s).powi(2);
    let feat = |i: usize| {
        let (z, y, x) = dims.coords(i);
        [z as f64, y as f64, x as f64, volume.voxels()[i] as f64]
    };
    let mut centroids: Vec<[f64; 4]> = grid_seeds(mask, dims, k_sv, s).into_iter().map(feat).collect();
    let dist = |c: &[f64; 4], f: &[f64; 4]| {
        let ds = (0..3).map(|a| (c[a] - f[a]).powi(2)).sum::<f64>();
        (f[3] - c[3]).powi(2) + ratio * ds
    };
    let reach = s.ceil() as isize;
    let mut assign: Vec<Option<usize>> = vec![None; dims.len()];
    for _ in 0..10 {
        let mut best = vec![f64::INFINITY; dims.len()];
        assign.iter_mut().for_each(|a| *a = None);
        for (k, c) in centroids.iter().enumerate() {
            let lo = |v: f64| (v.round() as isize - reach).max(0) as usize;
            let hi = |v: f64, n: usize| ((v.round() as isize + reach) as usize).min(n - 1);
            for z in lo(c[0])..=hi(c[0], dims.depth) {
                for y in lo(c[1])..=hi(c[1], dims.height) {
                    for x in lo(c[2])..=hi(c[2], dims.width) {
                        let i = dims.index(z, y, x);
                        if !mask[i] {
                            continue;
                        }
                        let d = dist(c, &feat(i));
                        if d < best[i] {
                            best[i] = d;
                            assign[i] = Some(k);
                        }
                    }
                }
            }
        }
        let mut sums = vec![[0.0f64; 5]; centroids.len()];
        for (i, a) in assign.iter().enumerate() {
            if let Some(k) = a {
                let f = feat(i);
                for d in 0..4 {
                    sums[*k][d] += f[d];
                }
                sums[*k][4] += 1.0;
            }
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s[4] > 0.0 {
                *c = [s[0] / s[4], s[1] / s[4], s[2] / s[4], s[3] / s[4]];
            }
        }
    }
    for i in 0..dims.len() {
        if mask[i] && assign[i].is_none() {
            let f = feat(i);
            let k = (0..centroids.len())
                .min_by(|&a, &b| dist(&centroids[a], &f).total_cmp(&dist(&centroids[b], &f)))
                .expect("at least one centroid");
            assign[i] = Some(k);
        }
    }
    // Drop empty clusters and relabel densely in seed order.
    let mut remap = vec![0u32; centroids.len()];
    let mut used = vec![false; centroids.len()];
    for k in assign.iter().flatten() {
        used[*k] = true;
    }
    let mut next = 0u32;
    let mut kept = Vec::new();
    for k in 0..centroids.len() {
        if used[k] {
            next += 1;
            remap[k] = next;
            kept.push(k);
        }
    }
    let labels: Vec<u32> = assign.iter().map(|a| a.map_or(0, |k| remap[k])).collect();
    let mut sums = vec![[0.0f64; 5]; kept.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            let f = feat(i);
            for d in 0..4 {
                sums[l as usize - 1][d] += f[d];
            }
            sums[l as usize - 1][4] += 1.0;
        }
    }
    let centroids = sums.iter().map(|s| [s[0] / s[4], s[1] / s[4], s[2] / s[4], s[3] / s[4]]).collect();
    Ok(SupervoxelMap {
        dims,
        labels,
        k: kept.len(),
        centroids,
    })
}

/// Copy of `volume` with the listed supervoxels (1-based labels) set to `fill`.
pub fn perturb(volume: &Volume, map: &SupervoxelMap, hidden: &[u32], fill: f32) -> Volume {
    let mut out = volume.clone();
    for (v, l) in out.voxels_mut().iter_mut().zip(&map.labels) {
        if *l > 0 && hidden.contains(l) {
            *v = fill;
        }
    }
    out
}

/// Mean per-token log-likelihood of `reference_report` with the listed
/// supervoxels replaced by `fill`.
pub fn lime_score<S: Scalar>(
    model: &Model<S>,
    volume: &Volume,
    map: &SupervoxelMap,
    hidden: &[u32],
    reference_report: &str,
    fill: f32,
) -> Result<f64> {
    model.report_log_likelihood(&perturb(volume, map, hidden, fill), reference_report)
}

/// Weighted ridge surrogate over binary presence vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted coefficient of determination on the drawn samples.
    pub r2: f64,
}

/// Fits `y ~ b + z·w` by weighted ridge regression (intercept unpenalised).
pub fn weighted_ridge(zs: &[Vec<bool>], ys: &[f64], ws: &[f64], lambda: f64) -> Result<SurrogateFit> {
    let n = zs.len();
    let k = zs.first().map_or(0, Vec::len);
    let x = DMatrix::from_fn(n, k + 1, |r, c| if c == 0 { 1.0 } else if zs[r][c - 1] { 1.0 } else { 0.0 });
    let w = DVector::from_column_slice(ws);
    let y = DVector::from_column_slice(ys);
    let xw = DMatrix::from_fn(n, k + 1, |r, c| x[(r, c)] * w[r]);
    let mut a = xw.transpose() * &x;
    for j in 1..=k {
        a[(j, j)] += lambda;
    }
    let rhs = xw.transpose() * &y;
    let theta = match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular surrogate design".into()))?,
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite surrogate coefficients".into()));
    }
    let pred = &x * &theta;
    let wsum: f64 = ws.iter().sum();
    let ybar = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let ss_res: f64 = (0..n).map(|i| ws[i] * (ys[i] - pred[i]).powi(2)).sum();
    let ss_tot: f64 = (0..n).map(|i| ws[i] * (ys[i] - ybar).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(SurrogateFit {
        coefficients: theta.iter().skip(1).copied().collect(),
        intercept: theta[0],
        r2,
    })
}

/// LIME over `k` binary features with an arbitrary scorer. `score(z)` gets
/// the presence vector (true = kept).
pub fn lime_fit(
    k: usize,
    n_samples: usize,
    kernel_width: f64,
    lambda: f64,
    seed: u64,
    mut score: impl FnMut(&[bool]) -> Result<f64>,
) -> Result<SurrogateFit> {
    if k == 0 || n_samples < k + 1 {
        return Err(Error::Config(format!("need n_samples >= k + 1 ({n_samples} < {})", k + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zs = Vec::with_capacity(n_samples);
    let mut ys = Vec::with_capacity(n_samples);
    let mut ws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
        let kept = z.iter().filter(|&&b| b).count() as f64 / k as f64;
        ws.push((-(1.0 - kept).powi(2) / (kernel_width * kernel_width)).exp());
        ys.push(score(&z)?);
        zs.push(z);
    }
    weighted_ridge(&zs, &ys, &ws, lambda)
}

/// Per-supervoxel weights and their voxel projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
    pub volume: Volume,
}

pub fn project_weights(map: &SupervoxelMap, weights: &[f64]) -> Result<Volume> {
    if weights.len() != map.k {
        return Err(Error::Shape(format!("{} weights for {} supervoxels", weights.len(), map.k)));
    }
    let voxels = map
        .labels
        .iter()
        .map(|&l| if l == 0 { 0.0 } else { weights[l as usize - 1] as f32 })
        .collect();
    Volume::new(map.dims, voxels)
}

/// LIME attribution of `reference_report` to the supervoxels of `volume`.
pub fn lime_attribute<S: Scalar>(
    model: &Model<S>,
    volume: &Volume,
    map: &SupervoxelMap,
    reference_report: &str,
    cfg: &LimeConfig,
) -> Result<AttributionMap> {
    let fit = lime_fit(map.k, cfg.n_samples, cfg.kernel_width, cfg.ridge_lambda, cfg.seed, |z| {
        let hidden: Vec<u32> = (0..map.k).filter(|&j| !z[j]).map(|j| j as u32 + 1).collect();
        lime_score(model, volume, map, &hidden, reference_report, cfg.fill)
    })?;
    Ok(AttributionMap {
        volume: project_weights(map, &fit.coefficients)?,
        weights: fit.coefficients,
        intercept: fit.intercept,
        r2: fit.r2,
    })
}
