//! Inflated 3D vision transformer.
//!
//! A 2D RGB patch-embedding kernel is turned into a single-channel 3D kernel
//! by summing over the colour channels, replicating along depth and dividing
//! by the patch depth. A volume that is constant along depth then embeds
//! exactly like its slice replicated to three channels in the 2D model.
//! Positions use `P_depth(z) + P_spatial(y, x)`.

use ndarray::{Array1, Array2, Array4, Array5};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{cast, Graph, NodeId, Scalar};
use crate::error::{Error, Result};
use crate::nn::{block_forward, init_block, init_final_norm, layer_norm, BlockSpec};
use crate::params::{frozen, key, normal_matrix, Binder, ParamStore};
use crate::volume::{Dims, Volume};

pub const PATCH_GROUP: &str = "encoder.patch3d";
pub const POS_DEPTH_GROUP: &str = "encoder.pos_depth";
pub const POS_SPATIAL_GROUP: &str = "encoder.pos_spatial";
pub const BLOCKS_GROUP: &str = "encoder.blocks";

/// 2D patch-embedding kernel over RGB input.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedKernel2D<S> {
    /// (d_v, 3, patch_h, patch_w)
    pub weight: Array4<S>,
    pub bias: Array1<S>,
}

/// 3D patch-embedding kernel over single-channel input.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedKernel3D<S> {
    /// (d_v, 1, patch_d, patch_h, patch_w)
    pub weight: Array5<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> PatchEmbedKernel2D<S> {
    pub fn random<R: Rng>(rng: &mut R, d_v: usize, patch_h: usize, patch_w: usize) -> Self {
        let fan_in = 3 * patch_h * patch_w;
        let flat = normal_matrix::<S, R>(rng, d_v, fan_in, 1.0 / (fan_in as f64).sqrt());
        Self {
            weight: flat
                .into_shape_with_order((d_v, 3, patch_h, patch_w))
                .expect("kernel shape"),
            bias: Array1::zeros(d_v),
        }
    }

    /// Embeds every non-overlapping patch of a (3, H, W) image; rows follow
    /// raster order over the patch grid.
    pub fn embed_image(&self, image: &ndarray::Array3<S>) -> Result<Array2<S>> {
        let (d_v, c, ph, pw) = self.weight.dim();
        let (ic, h, w) = image.dim();
        if ic != c || h % ph != 0 || w % pw != 0 {
            return Err(Error::Shape(format!(
                "image {ic}x{h}x{w} incompatible with {c}-channel {ph}x{pw} patches"
            )));
        }
        let (gh, gw) = (h / ph, w / pw);
        let mut out = Array2::zeros((gh * gw, d_v));
        for gy in 0..gh {
            for gx in 0..gw {
                let row = gy * gw + gx;
                for o in 0..d_v {
                    let mut acc = self.bias[o];
                    for ch in 0..c {
                        for dy in 0..ph {
                            for dx in 0..pw {
                                acc = acc
                                    + self.weight[[o, ch, dy, dx]] * image[[ch, gy * ph + dy, gx * pw + dx]];
                            }
                        }
                    }
                    out[[row, o]] = acc;
                }
            }
        }
        Ok(out)
    }
}

impl<S: Scalar> PatchEmbedKernel3D<S> {
    pub fn d_v(&self) -> usize {
        self.weight.dim().0
    }

    /// Weight as a (d_v, patch_d*patch_h*patch_w) matrix.
    pub fn weight_matrix(&self) -> Array2<S> {
        let (d_v, _, pd, ph, pw) = self.weight.dim();
        self.weight
            .clone()
            .into_shape_with_order((d_v, pd * ph * pw))
            .expect("contiguous kernel")
    }
}

/// Collapses RGB by summation, replicates along depth, divides by depth.
pub fn inflate_patch_embed<S: Scalar>(k2d: &PatchEmbedKernel2D<S>, patch_d: usize) -> Result<PatchEmbedKernel3D<S>> {
    if patch_d == 0 {
        return Err(Error::Config("patch depth must be >= 1".into()));
    }
    let (d_v, c, ph, pw) = k2d.weight.dim();
    let inv = S::one() / cast::<S>(patch_d as f64);
    let mut weight = Array5::zeros((d_v, 1, patch_d, ph, pw));
    for o in 0..d_v {
        for dy in 0..ph {
            for dx in 0..pw {
                let mut sum = S::zero();
                for ch in 0..c {
                    sum = sum + k2d.weight[[o, ch, dy, dx]];
                }
                for dz in 0..patch_d {
                    weight[[o, 0, dz, dy, dx]] = sum * inv;
                }
            }
        }
    }
    Ok(PatchEmbedKernel3D {
        weight,
        bias: k2d.bias.clone(),
    })
}

/// Decomposed positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEmbedding3D<S> {
    /// (grid_h * grid_w, d_v), raster order.
    pub spatial: Array2<S>,
    /// (grid_d, d_v)
    pub depth: Array2<S>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl<S: Scalar> PositionalEmbedding3D<S> {
    pub fn grid_d(&self) -> usize {
        self.depth.nrows()
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> Array1<S> {
        &self.depth.row(z) + &self.spatial.row(y * self.grid_w + x)
    }

    /// Full (grid_d * grid_h * grid_w, d_v) table in token order.
    pub fn table(&self) -> Array2<S> {
        let n2 = self.spatial.nrows();
        let mut out = Array2::zeros((self.grid_d() * n2, self.spatial.ncols()));
        for z in 0..self.grid_d() {
            for s in 0..n2 {
                out.row_mut(z * n2 + s)
                    .assign(&(&self.depth.row(z) + &self.spatial.row(s)));
            }
        }
        out
    }
}

/// Copies the 2D table as the spatial term; the depth term starts at zero.
pub fn build_pos_embed<S: Scalar>(p2d: &Array2<S>, grid_h: usize, grid_w: usize, grid_d: usize) -> Result<PositionalEmbedding3D<S>> {
    if p2d.nrows() != grid_h * grid_w {
        return Err(Error::Config(format!(
            "2D table has {} rows, grid {grid_h}x{grid_w} needs {}",
            p2d.nrows(),
            grid_h * grid_w
        )));
    }
    Ok(PositionalEmbedding3D {
        spatial: p2d.clone(),
        depth: Array2::zeros((grid_d, p2d.ncols())),
        grid_h,
        grid_w,
    })
}

/// 2D sine-cosine table (half the width encodes y, half x).
pub fn sincos_2d<S: Scalar>(grid_h: usize, grid_w: usize, d: usize) -> Array2<S> {
    let quarter = (d / 4).max(1);
    Array2::from_shape_fn((grid_h * grid_w, d), |(n, c)| {
        let (y, x) = ((n / grid_w) as f64, (n % grid_w) as f64);
        let pos = if c < d / 2 { y } else { x };
        let k = c % (d / 2).max(1);
        let freq = 1.0 / 10000f64.powf((k % quarter) as f64 / quarter as f64);
        let v = if k < quarter { (pos * freq).sin() } else { (pos * freq).cos() };
        cast(v)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dims: Dims,
    pub patch: Dims,
    pub d_v: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dims: Dims::new(16, 32, 32),
            patch: Dims::new(8, 8, 8),
            d_v: 64,
            heads: 4,
            layers: 2,
            mlp_hidden: 128,
        }
    }
}

impl EncoderConfig {
    pub fn grid(&self) -> Dims {
        Dims::new(
            self.input_dims.depth / self.patch.depth,
            self.input_dims.height / self.patch.height,
            self.input_dims.width / self.patch.width,
        )
    }

    pub fn num_tokens(&self) -> usize {
        self.grid().len()
    }

    pub fn validate(&self) -> Result<()> {
        let (i, p) = (self.input_dims, self.patch);
        if p.is_empty() || i.depth % p.depth != 0 || i.height % p.height != 0 || i.width % p.width != 0 {
            return Err(Error::Shape(format!(
                "volume {}x{}x{} not divisible by patch {}x{}x{}",
                i.depth, i.height, i.width, p.depth, p.height, p.width
            )));
        }
        if self.heads == 0 || self.d_v % self.heads != 0 {
            return Err(Error::Config(format!("d_v {} not divisible by {} heads", self.d_v, self.heads)));
        }
        Ok(())
    }

    fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            width: self.d_v,
            heads: self.heads,
            mlp_hidden: self.mlp_hidden,
        }
    }
}

/// Initialises encoder groups from a 2D kernel and 2D positional table.
pub fn init_encoder<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    cfg: &EncoderConfig,
    k2d: &PatchEmbedKernel2D<S>,
    p2d: &Array2<S>,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let k3d = inflate_patch_embed(k2d, cfg.patch.depth)?;
    if k3d.d_v() != cfg.d_v {
        return Err(Error::Config("2D kernel width differs from d_v".into()));
    }
    let grid = cfg.grid();
    let pos = build_pos_embed(p2d, grid.height, grid.width, grid.depth)?;
    store.insert(key(PATCH_GROUP, "weight"), k3d.weight_matrix());
    store.insert(key(PATCH_GROUP, "bias"), k3d.bias.clone().insert_axis(ndarray::Axis(0)));
    store.insert(key(POS_SPATIAL_GROUP, "table"), pos.spatial);
    store.insert(key(POS_DEPTH_GROUP, "table"), pos.depth);
    for i in 0..cfg.layers {
        init_block(store, BLOCKS_GROUP, i, cfg.block_spec(), cfg.layers, rng);
    }
    init_final_norm(store, BLOCKS_GROUP, cfg.d_v);
    Ok(())
}

/// Reads the decomposed positional table back out of a store.
pub fn positional_embedding<S: Scalar>(store: &ParamStore<S>, cfg: &EncoderConfig) -> Result<PositionalEmbedding3D<S>> {
    let grid = cfg.grid();
    Ok(PositionalEmbedding3D {
        spatial: store.get(&key(POS_SPATIAL_GROUP, "table"))?.clone(),
        depth: store.get(&key(POS_DEPTH_GROUP, "table"))?.clone(),
        grid_h: grid.height,
        grid_w: grid.width,
    })
}

/// Flattens a volume into (N, patch voxels) rows in token order.
pub fn patchify<S: Scalar>(volume: &Volume, patch: Dims) -> Result<Array2<S>> {
    let d = volume.dims();
    if patch.is_empty() || d.depth % patch.depth != 0 || d.height % patch.height != 0 || d.width % patch.width != 0 {
        return Err(Error::Shape(format!(
            "volume {}x{}x{} not divisible by patch {}x{}x{}",
            d.depth, d.height, d.width, patch.depth, patch.height, patch.width
        )));
    }
    let (gd, gh, gw) = (d.depth / patch.depth, d.height / patch.height, d.width / patch.width);
    let mut out = Array2::zeros((gd * gh * gw, patch.len()));
    for gz in 0..gd {
        for gy in 0..gh {
            for gx in 0..gw {
                let n = (gz * gh + gy) * gw + gx;
                let mut row = out.row_mut(n);
                let mut p = 0;
                for dz in 0..patch.depth {
                    for dy in 0..patch.height {
                        for dx in 0..patch.width {
                            row[p] = cast(volume.get(gz * patch.depth + dz, gy * patch.height + dy, gx * patch.width + dx) as f64);
                            p += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Patch embedding plus positions, before the transformer blocks.
pub fn embed_patches<S: Scalar>(g: &mut Graph<S>, b: &mut Binder<'_, S>, cfg: &EncoderConfig, patches: NodeId) -> Result<NodeId> {
    let w = b.get(g, &key(PATCH_GROUP, "weight"))?;
    let bias = b.get(g, &key(PATCH_GROUP, "bias"))?;
    let x = g.matmul_t(patches, w);
    let x = g.add_row(x, bias);
    let grid = cfg.grid();
    let n2 = grid.height * grid.width;
    let depth_ids: Vec<usize> = (0..grid.len()).map(|n| n / n2).collect();
    let spatial_ids: Vec<usize> = (0..grid.len()).map(|n| n % n2).collect();
    let pd = b.get(g, &key(POS_DEPTH_GROUP, "table"))?;
    let ps = b.get(g, &key(POS_SPATIAL_GROUP, "table"))?;
    let pd = g.gather(pd, &depth_ids);
    let ps = g.gather(ps, &spatial_ids);
    let pos = g.add(pd, ps);
    Ok(g.add(x, pos))
}

/// Full encoder on the tape: returns Z_enc (N x d_v).
pub fn encode_graph<S: Scalar>(g: &mut Graph<S>, b: &mut Binder<'_, S>, cfg: &EncoderConfig, volume: &Volume) -> Result<NodeId> {
    if volume.dims() != cfg.input_dims {
        return Err(Error::Shape(format!(
            "encoder expects {:?}, got {:?}",
            cfg.input_dims,
            volume.dims()
        )));
    }
    let patches = g.constant(patchify(volume, cfg.patch)?);
    let mut x = embed_patches(g, b, cfg, patches)?;
    for i in 0..cfg.layers {
        x = block_forward(g, b, BLOCKS_GROUP, i, x, cfg.block_spec(), false, None)?;
    }
    layer_norm(g, b, x, &key(BLOCKS_GROUP, "final"))
}

/// Z_enc for one volume without recording gradients.
pub fn encode_volume<S: Scalar>(store: &ParamStore<S>, cfg: &EncoderConfig, volume: &Volume) -> Result<Array2<S>> {
    let mut g = Graph::new();
    let mut b = Binder::new(store, &frozen);
    let z = encode_graph(&mut g, &mut b, cfg, volume)?;
    Ok(g.value(z).clone())
}
