//! Pre-norm transformer blocks shared by the vision encoder and the LM.

use rand::Rng;

use ndarray::Array2;

use crate::autograd::{cast, Graph, NodeId, Scalar};
use crate::error::Result;
use crate::params::{key, normal_matrix, Binder, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

/// Attention projections that may carry LoRA adapters.
pub const ATTN_MAPS: [&str; 4] = ["wq", "wk", "wv", "wo"];

/// Low-rank adapter settings for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
}

impl LoraSpec {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Group holding the adapters of block `i`.
pub fn lora_group(block: usize) -> String {
    format!("lora.block{block}")
}

fn ones<S: Scalar>(n: usize) -> Array2<S> {
    Array2::ones((1, n))
}

fn zeros<S: Scalar>(n: usize) -> Array2<S> {
    Array2::zeros((1, n))
}

/// Initialises block `i` of `group` with N(0, 0.02²) weights.
pub fn init_block<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    group: &str,
    i: usize,
    spec: BlockSpec,
    layers: usize,
    rng: &mut R,
) {
    let d = spec.width;
    let std = 0.02;
    let out_std = 0.02 / (2.0 * layers as f64).sqrt();
    let k = |n: &str| key(group, &format!("{i}.{n}"));
    store.insert(k("ln1.g"), ones(d));
    store.insert(k("ln1.b"), zeros(d));
    store.insert(k("attn.wq"), normal_matrix(rng, d, d, std));
    store.insert(k("attn.wk"), normal_matrix(rng, d, d, std));
    store.insert(k("attn.wv"), normal_matrix(rng, d, d, std));
    store.insert(k("attn.wo"), normal_matrix(rng, d, d, out_std));
    store.insert(k("ln2.g"), ones(d));
    store.insert(k("ln2.b"), zeros(d));
    store.insert(k("mlp.w1"), normal_matrix(rng, spec.mlp_hidden, d, std));
    store.insert(k("mlp.b1"), zeros(spec.mlp_hidden));
    store.insert(k("mlp.w2"), normal_matrix(rng, d, spec.mlp_hidden, out_std));
    store.insert(k("mlp.b2"), zeros(d));
}

pub fn init_final_norm<S: Scalar>(store: &mut ParamStore<S>, group: &str, d: usize) {
    store.insert(key(group, "final.g"), ones(d));
    store.insert(key(group, "final.b"), zeros(d));
}

/// `y = x Wᵀ (+ b)`.
pub fn linear<S: Scalar>(
    g: &mut Graph<S>,
    b: &mut Binder<'_, S>,
    x: NodeId,
    weight: &str,
    bias: Option<&str>,
) -> Result<NodeId> {
    let w = b.get(g, weight)?;
    let mut y = g.matmul_t(x, w);
    if let Some(bias) = bias {
        let bb = b.get(g, bias)?;
        y = g.add_row(y, bb);
    }
    Ok(y)
}

fn adapted<S: Scalar>(
    g: &mut Graph<S>,
    b: &mut Binder<'_, S>,
    x: NodeId,
    weight: &str,
    adapter: Option<(String, LoraSpec)>,
) -> Result<NodeId> {
    let base = linear(g, b, x, weight, None)?;
    let Some((prefix, spec)) = adapter else {
        return Ok(base);
    };
    let a_key = format!("{prefix}.a");
    if !b.has(&a_key) {
        return Ok(base);
    }
    let a = b.get(g, &a_key)?;
    let bm = b.get(g, &format!("{prefix}.b"))?;
    let low = g.matmul_t(x, a);
    let delta = g.matmul_t(low, bm);
    let delta = g.scale(delta, cast(spec.scaling()));
    Ok(g.add(base, delta))
}

pub fn layer_norm<S: Scalar>(
    g: &mut Graph<S>,
    b: &mut Binder<'_, S>,
    x: NodeId,
    prefix: &str,
) -> Result<NodeId> {
    let gain = b.get(g, &format!("{prefix}.g"))?;
    let bias = b.get(g, &format!("{prefix}.b"))?;
    Ok(g.layer_norm(x, gain, bias))
}

/// One pre-norm block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[allow(clippy::too_many_arguments)]
pub fn block_forward<S: Scalar>(
    g: &mut Graph<S>,
    b: &mut Binder<'_, S>,
    group: &str,
    i: usize,
    x: NodeId,
    spec: BlockSpec,
    causal: bool,
    lora: Option<LoraSpec>,
) -> Result<NodeId> {
    let k = |n: &str| key(group, &format!("{i}.{n}"));
    let adapter = |m: &str| lora.map(|s| (key(&lora_group(i), m), s));

    let h = layer_norm(g, b, x, &k("ln1"))?;
    let q = adapted(g, b, h, &k("attn.wq"), adapter("wq"))?;
    let kk = adapted(g, b, h, &k("attn.wk"), adapter("wk"))?;
    let v = adapted(g, b, h, &k("attn.wv"), adapter("wv"))?;
    let dh = spec.width / spec.heads;
    let scale = cast::<S>(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(spec.heads);
    for hd in 0..spec.heads {
        let qh = g.slice_cols(q, hd * dh, dh);
        let kh = g.slice_cols(kk, hd * dh, dh);
        let vh = g.slice_cols(v, hd * dh, dh);
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let p = g.softmax(scores, causal);
        heads.push(g.matmul(p, vh));
    }
    let cat = g.concat_cols(&heads);
    let attn = adapted(g, b, cat, &k("attn.wo"), adapter("wo"))?;
    let x = g.add(x, attn);

    let h = layer_norm(g, b, x, &k("ln2"))?;
    let h = linear(g, b, h, &k("mlp.w1"), Some(&k("mlp.b1")))?;
    let h = g.gelu(h);
    let h = linear(g, b, h, &k("mlp.w2"), Some(&k("mlp.b2")))?;
    Ok(g.add(x, h))
}
