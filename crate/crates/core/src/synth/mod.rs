//! Synthetic cohort of FLAIR-like volumes with templated reports.
//!
//! Geometry: a brain ellipsoid (intensity 0.4, noise sigma 0.02) on a zero
//! background with two dark ventricles. Pathological subjects get an
//! ellipsoidal lesion with a bright core, an optional dark necrotic centre,
//! an optional enhancing rim and an optional Gaussian edema halo. Left means
//! low `x` (x < width/2).

pub mod templates;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Anatomy, ClinicalFindings, Pathology};
use crate::volume::{Dims, Volume};

pub use templates::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectClass {
    Pathological,
    Healthy,
}

/// Placed lesion ellipsoid in voxel coordinates (z, y, x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    /// Outer normalised radius of the halo (1.0 without edema).
    pub outer: f64,
}

impl Lesion {
    /// Normalised ellipsoidal radius of a voxel.
    pub fn radius_at(&self, z: usize, y: usize, x: usize) -> f64 {
        let p = [z as f64, y as f64, x as f64];
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.radii[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub class: SubjectClass,
    /// `None` for healthy subjects.
    pub side: Option<Side>,
    pub volume: Volume,
    pub report: String,
    pub findings: ClinicalFindings,
    pub lesion: Option<Lesion>,
    /// Voxels painted by the lesion (core and halo), empty when healthy.
    pub lesion_mask: Vec<bool>,
    /// Ground-truth brain ellipsoid.
    pub brain_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_pathological: usize,
    pub n_healthy: usize,
    /// Fractions for (left, right, bilateral, undefined).
    pub laterality_mix: [f64; 4],
    pub seed: u64,
    pub volume_dims: Dims,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_pathological: 369,
            n_healthy: 99,
            laterality_mix: [0.425, 0.407, 0.146, 0.022],
            seed: 1234,
            volume_dims: Dims::new(16, 32, 32),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.laterality_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.laterality_mix.iter().any(|&f| f < 0.0) {
            return Err(Error::Config(format!("laterality mix sums to {sum}, expected 1")));
        }
        let d = self.volume_dims;
        if d.depth < 4 || d.height < 8 || d.width < 8 {
            return Err(Error::Config("volume dims too small for the phantom".into()));
        }
        Ok(())
    }
}

const BRAIN_LEVEL: f64 = 0.4;
const NOISE_SIGMA: f64 = 0.02;
const VENTRICLE_LEVEL: f64 = 0.1;
const CORE_LEVEL: f64 = 0.8;
const RIM_LEVEL: f64 = 1.0;
const NECROSIS_LEVEL: f64 = 0.15;
const EDEMA_LEVEL: f64 = 0.7;
const HALO_SIGMA: f64 = 0.45;
const HALO_OUTER: f64 = 1.8;

struct Frame {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Frame {
    fn new(dims: Dims) -> Self {
        let c = |n: usize| (n as f64 - 1.0) / 2.0;
        Self {
            center: [c(dims.depth), c(dims.height), c(dims.width)],
            semi: [
                0.42 * dims.depth as f64,
                0.44 * dims.height as f64,
                0.40 * dims.width as f64,
            ],
        }
    }

    /// Normalised brain coordinates to voxel coordinates.
    fn to_voxel(&self, n: [f64; 3]) -> [f64; 3] {
        [
            self.center[0] + n[0] * self.semi[0],
            self.center[1] + n[1] * self.semi[1],
            self.center[2] + n[2] * self.semi[2],
        ]
    }

    fn brain_radius(&self, z: usize, y: usize, x: usize) -> f64 {
        let p = [z as f64, y as f64, x as f64];
        (0..3)
            .map(|i| ((p[i] - self.center[i]) / self.semi[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Splits a seed into independent per-purpose streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finaliser.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_pathology<R: Rng>(rng: &mut R) -> Vec<Pathology> {
    let probs = [0.85, 0.5, 0.4, 0.35];
    let mut out: Vec<Pathology> = Pathology::ALL
        .iter()
        .zip(probs)
        .filter(|(_, p)| rng.random_bool(*p))
        .map(|(p, _)| *p)
        .collect();
    if out.is_empty() {
        out.push(Pathology::Edema);
    }
    out
}

fn place_lesion<R: Rng>(rng: &mut R, dims: Dims, frame: &Frame, side: Side, anatomy: Anatomy, path: &[Pathology]) -> Lesion {
    let necrotic = path.contains(&Pathology::Necrosis);
    let size = if necrotic { 1.3 } else { 1.0 };
    let mut radii = [
        rng.random_range(0.10..0.15) * dims.depth as f64 * size,
        rng.random_range(0.06..0.09) * dims.height as f64 * size,
        rng.random_range(0.06..0.09) * dims.width as f64 * size,
    ];
    let outer = if path.contains(&Pathology::Edema) {
        HALO_OUTER
    } else {
        1.0
    };
    // (z, y) in normalised brain coordinates, |x| lateral offset.
    let (nz, ny, nx) = match anatomy {
        Anatomy::Frontal => (rng.random_range(-0.1..0.3), rng.random_range(-0.6..-0.45), rng.random_range(0.35..0.5)),
        Anatomy::Occipital => (rng.random_range(-0.1..0.3), rng.random_range(0.45..0.6), rng.random_range(0.35..0.5)),
        Anatomy::Parietal => (rng.random_range(0.3..0.45), rng.random_range(-0.1..0.2), rng.random_range(0.35..0.5)),
        Anatomy::Temporal => (rng.random_range(-0.45..-0.3), rng.random_range(-0.2..0.15), rng.random_range(0.4..0.5)),
        Anatomy::Ventricle => (rng.random_range(-0.05..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.3..0.4)),
    };
    let mid = frame.center[2];
    let half = dims.width as f64 / 2.0;
    let mut center = frame.to_voxel([nz, ny, 0.0]);
    match side {
        Side::Left | Side::Right => {
            let offset = nx * frame.semi[2];
            // Every painted voxel must stay strictly inside its hemisphere.
            let reach = radii[2] * outer;
            let x = match side {
                Side::Left => (mid - offset).min(half - reach - 0.05),
                _ => (mid + offset).max(half - 1.0 + reach + 0.05),
            };
            center[2] = x;
        }
        Side::Bilateral => {
            center[2] = mid;
            radii[2] = rng.random_range(0.16..0.22) * dims.width as f64;
        }
        Side::Undefined => {
            center[2] = mid;
        }
    }
    Lesion {
        center,
        radii,
        outer,
    }
}

fn ventricle_centers(frame: &Frame) -> [[f64; 3]; 2] {
    [
        frame.to_voxel([0.05, 0.0, -0.2]),
        frame.to_voxel([0.05, 0.0, 0.2]),
    ]
}

/// Generates one subject deterministically from `seed`.
pub fn generate_subject(
    subject_id: &str,
    seed: u64,
    class: SubjectClass,
    side: Option<Side>,
    dims: Dims,
) -> Result<SubjectRecord> {
    if class == SubjectClass::Pathological && side.is_none() {
        return Err(Error::Config("pathological subjects need a side".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = Frame::new(dims);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("sigma");

    let (report, findings, lesion, compressed) = match class {
        SubjectClass::Healthy => {
            let v = rng.random_range(0..templates::HEALTHY_VARIANTS.len());
            (templates::render_healthy(v), ClinicalFindings::default(), None, [false; 2])
        }
        SubjectClass::Pathological => {
            let side = side.expect("checked above");
            let anatomy = Anatomy::ALL[rng.random_range(0..Anatomy::ALL.len())];
            let path = sample_pathology(&mut rng);
            let mut phrasing = [0usize; 5];
            for p in phrasing.iter_mut() {
                *p = rng.random_range(0..templates::VARIANTS);
            }
            let lesion = place_lesion(&mut rng, dims, &frame, side, anatomy, &path);
            let compress = path.contains(&Pathology::Compression);
            let compressed = match side {
                Side::Left => [compress, false],
                Side::Right => [false, compress],
                _ => [compress, compress],
            };
            (
                templates::render_pathological(side, anatomy, &path, phrasing),
                templates::findings_for(side, anatomy, &path),
                Some((lesion, path)),
                compressed,
            )
        }
    };

    let vents = ventricle_centers(&frame);
    let vent_semi = [0.12 * dims.depth as f64, 0.22 * dims.height as f64, 0.06 * dims.width as f64];
    let mut brain_mask = vec![false; dims.len()];
    let mut lesion_mask = vec![false; dims.len()];
    let mut voxels = vec![0.0f32; dims.len()];
    for z in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                let i = dims.index(z, y, x);
                if frame.brain_radius(z, y, x) > 1.0 {
                    continue;
                }
                brain_mask[i] = true;
                let mut v = BRAIN_LEVEL;
                for (k, c) in vents.iter().enumerate() {
                    let squash = if compressed[k] { [1.0, 0.7, 0.4] } else { [1.0; 3] };
                    let p = [z as f64, y as f64, x as f64];
                    let r2: f64 = (0..3)
                        .map(|a| ((p[a] - c[a]) / (vent_semi[a] * squash[a])).powi(2))
                        .sum();
                    if r2 <= 1.0 {
                        v = VENTRICLE_LEVEL;
                    }
                }
                if let Some((lesion, path)) = &lesion {
                    let r = lesion.radius_at(z, y, x);
                    if r <= lesion.outer {
                        lesion_mask[i] = true;
                        if r <= 1.0 {
                            v = CORE_LEVEL;
                            if path.contains(&Pathology::Enhancement) && r >= 0.75 {
                                v = RIM_LEVEL;
                            }
                            if path.contains(&Pathology::Necrosis) && r < 0.5 {
                                v = NECROSIS_LEVEL;
                            }
                        } else {
                            let t = (r - 1.0) / HALO_SIGMA;
                            v = v.max(EDEMA_LEVEL * (-0.5 * t * t).exp());
                        }
                    }
                }
                voxels[i] = (v + noise.sample(&mut rng)) as f32;
            }
        }
    }

    Ok(SubjectRecord {
        subject_id: subject_id.to_string(),
        class,
        side: if class == SubjectClass::Healthy { None } else { side },
        volume: Volume::new(dims, voxels)?,
        report,
        findings,
        lesion: lesion.map(|(l, _)| l),
        lesion_mask,
        brain_mask,
    })
}

/// Largest-remainder apportionment of `total` over `fractions`.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // Stable: ties keep the earlier bucket first.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Builds the full cohort: pathological subjects first, then healthy ones.
pub fn build_cohort(cfg: &CohortConfig) -> Result<Vec<SubjectRecord>> {
    cfg.validate()?;
    let counts = largest_remainder(cfg.n_pathological, &cfg.laterality_mix);
    let mut sides: Vec<Side> = Side::ALL
        .iter()
        .zip(&counts)
        .flat_map(|(s, &n)| std::iter::repeat_n(*s, n))
        .collect();
    sides.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0)));

    let mut out = Vec::with_capacity(cfg.n_pathological + cfg.n_healthy);
    for (i, side) in sides.into_iter().enumerate() {
        let id = format!("sub-{i:04}");
        let seed = derive_seed(cfg.seed, 1 + i as u64);
        out.push(generate_subject(&id, seed, SubjectClass::Pathological, Some(side), cfg.volume_dims)?);
    }
    for j in 0..cfg.n_healthy {
        let i = cfg.n_pathological + j;
        let id = format!("sub-{i:04}");
        let seed = derive_seed(cfg.seed, 1 + i as u64);
        out.push(generate_subject(&id, seed, SubjectClass::Healthy, None, cfg.volume_dims)?);
    }
    Ok(out)
}

/// Subject ids per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Stratified subject-level split by (class, side).
pub fn split_cohort(cohort: &[SubjectRecord], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
    }
    let mut strata: BTreeMap<(SubjectClass, Option<Side>), Vec<&str>> = BTreeMap::new();
    for s in cohort {
        strata
            .entry((s.class, s.side))
            .or_default()
            .push(s.subject_id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits::default();
    for ids in strata.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let counts = largest_remainder(ids.len(), &ratios);
        let (train, rest) = ids.split_at(counts[0]);
        let (val, test) = rest.split_at(counts[1]);
        splits.train.extend(train.iter().map(|s| s.to_string()));
        splits.val.extend(val.iter().map(|s| s.to_string()));
        splits.test.extend(test.iter().map(|s| s.to_string()));
    }
    splits.train.sort();
    splits.val.sort();
    splits.test.sort();
    Ok(splits)
}
