//! Token compression and the gated projector into the LM embedding space.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{cast, Graph, NodeId, Scalar};
use crate::error::{Error, Result};
use crate::nn::linear;
use crate::params::{frozen, key, normal_matrix, Binder, ParamStore};

pub const PROJ1_GROUP: &str = "bridge.proj1";
pub const PROJ2_GROUP: &str = "bridge.proj2";
pub const GATE_GROUP: &str = "bridge.gate";

pub const GATE_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeConfig {
    /// Visual token count after pooling.
    pub k: usize,
    pub d_v: usize,
    pub d_llm: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { k: 32, d_v: 64, d_llm: 128 }
    }
}

impl BridgeConfig {
    pub fn d_hidden(&self) -> usize {
        self.d_llm
    }
}

/// Segment `[floor(i·n/k), ceil((i+1)·n/k))` for output row `i`.
pub fn segment(i: usize, n: usize, k: usize) -> (usize, usize) {
    (i * n / k, ((i + 1) * n).div_ceil(k))
}

/// K×N matrix whose row `i` averages the rows of segment `i`.
pub fn pooling_matrix<S: Scalar>(n: usize, k: usize) -> Result<Array2<S>> {
    if k == 0 || k > n {
        return Err(Error::Shape(format!("cannot pool {n} tokens to {k}")));
    }
    let mut p = Array2::zeros((k, n));
    for i in 0..k {
        let (lo, hi) = segment(i, n, k);
        let w = S::one() / cast::<S>((hi - lo) as f64);
        for j in lo..hi {
            p[[i, j]] = w;
        }
    }
    Ok(p)
}

/// Adaptive average pooling along the token axis.
pub fn compress_tokens<S: Scalar>(z_enc: &Array2<S>, k: usize) -> Result<Array2<S>> {
    Ok(pooling_matrix::<S>(z_enc.nrows(), k)?.dot(z_enc))
}

/// Projector weights held outside a store, for direct use.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams<S> {
    /// (d_hidden, d_v)
    pub w1: Array2<S>,
    /// (1, d_hidden)
    pub b1: Array2<S>,
    /// (d_llm, d_hidden)
    pub w2: Array2<S>,
    /// (1, d_llm)
    pub b2: Array2<S>,
    pub gate: S,
}

impl<S: Scalar> ProjectorParams<S> {
    pub fn from_store(store: &ParamStore<S>) -> Result<Self> {
        Ok(Self {
            w1: store.get(&key(PROJ1_GROUP, "weight"))?.clone(),
            b1: store.get(&key(PROJ1_GROUP, "bias"))?.clone(),
            w2: store.get(&key(PROJ2_GROUP, "weight"))?.clone(),
            b2: store.get(&key(PROJ2_GROUP, "bias"))?.clone(),
            gate: store.get(&key(GATE_GROUP, "s"))?[[0, 0]],
        })
    }

    pub fn write_to(&self, store: &mut ParamStore<S>) {
        store.insert(key(PROJ1_GROUP, "weight"), self.w1.clone());
        store.insert(key(PROJ1_GROUP, "bias"), self.b1.clone());
        store.insert(key(PROJ2_GROUP, "weight"), self.w2.clone());
        store.insert(key(PROJ2_GROUP, "bias"), self.b2.clone());
        store.insert(key(GATE_GROUP, "s"), Array2::from_elem((1, 1), self.gate));
    }
}

pub fn init_bridge<S: Scalar, R: Rng>(store: &mut ParamStore<S>, cfg: &BridgeConfig, rng: &mut R) {
    let h = cfg.d_hidden();
    ProjectorParams {
        w1: normal_matrix(rng, h, cfg.d_v, 1.0 / (cfg.d_v as f64).sqrt()),
        b1: Array2::zeros((1, h)),
        w2: normal_matrix(rng, cfg.d_llm, h, 1.0 / (h as f64).sqrt()),
        b2: Array2::zeros((1, cfg.d_llm)),
        gate: cast(GATE_INIT),
    }
    .write_to(store);
}

/// `s · (W2 GELU(W1 z + b1) + b2)` row-wise.
pub fn project_tokens<S: Scalar>(z_pool: &Array2<S>, proj: &ProjectorParams<S>) -> Result<Array2<S>> {
    if z_pool.ncols() != proj.w1.ncols() {
        return Err(Error::Shape(format!(
            "pooled width {} differs from projector input {}",
            z_pool.ncols(),
            proj.w1.ncols()
        )));
    }
    let h = (z_pool.dot(&proj.w1.t()) + &proj.b1).mapv(crate::autograd::gelu);
    Ok((h.dot(&proj.w2.t()) + &proj.b2) * proj.gate)
}

/// Pooling plus gated projection on the tape.
pub fn bridge_graph<S: Scalar>(g: &mut Graph<S>, b: &mut Binder<'_, S>, z_enc: NodeId, k: usize) -> Result<NodeId> {
    let n = g.value(z_enc).nrows();
    let pool = g.constant(pooling_matrix(n, k)?);
    let z = g.matmul(pool, z_enc);
    let h = linear(g, b, z, &key(PROJ1_GROUP, "weight"), Some(&key(PROJ1_GROUP, "bias")))?;
    let h = g.gelu(h);
    let y = linear(g, b, h, &key(PROJ2_GROUP, "weight"), Some(&key(PROJ2_GROUP, "bias")))?;
    let s = b.get(g, &key(GATE_GROUP, "s"))?;
    Ok(g.scale_by(y, s))
}

/// Z_vis for an already encoded volume, without gradients.
pub fn bridge_forward<S: Scalar>(store: &ParamStore<S>, z_enc: &Array2<S>, k: usize) -> Result<Array2<S>> {
    let mut g = Graph::new();
    let mut b = Binder::new(store, &frozen);
    let z = g.constant(z_enc.clone());
    let y = bridge_graph(&mut g, &mut b, z, k)?;
    Ok(g.value(y).clone())
}
