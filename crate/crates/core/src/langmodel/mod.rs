//! Small causal transformer LM with soft-prompt input, masked loss and LoRA.

mod cache;
pub mod vocab;

pub use cache::KvCache;
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{cast, Graph, NodeId, Scalar, IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::nn::{block_forward, init_block, init_final_norm, layer_norm, lora_group, BlockSpec, LoraSpec, ATTN_MAPS};
use crate::params::{frozen, key, normal_matrix, Binder, ParamStore};

pub const EMBED_GROUP: &str = "lm.embed";
pub const BLOCKS_GROUP: &str = "lm.blocks";

/// The single fixed instruction used in phases 2a and 2b.
pub const CANONICAL_PROMPT: &str = "Generate a radiology report for this brain MRI FLAIR scan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_llm: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    /// Longest input sequence (visual + prompt + report rows).
    pub max_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_llm: 128,
            heads: 4,
            layers: 2,
            mlp_hidden: 256,
            max_len: 160,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_llm % self.heads != 0 {
            return Err(Error::Config(format!("d_llm {} not divisible by {} heads", self.d_llm, self.heads)));
        }
        if self.vocab_size < 4 || self.max_len == 0 {
            return Err(Error::Config("LM needs a vocabulary and a positive max_len".into()));
        }
        Ok(())
    }

    pub(crate) fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            width: self.d_llm,
            heads: self.heads,
            mlp_hidden: self.mlp_hidden,
        }
    }
}

pub fn tokens_key() -> String {
    key(EMBED_GROUP, "tokens")
}

pub fn pos_key() -> String {
    key(EMBED_GROUP, "pos")
}

pub fn init_lm<S: Scalar, R: Rng>(store: &mut ParamStore<S>, cfg: &LmConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    store.insert(tokens_key(), normal_matrix(rng, cfg.vocab_size, cfg.d_llm, 0.02));
    store.insert(pos_key(), normal_matrix(rng, cfg.max_len, cfg.d_llm, 0.02));
    for i in 0..cfg.layers {
        init_block(store, BLOCKS_GROUP, i, cfg.block_spec(), cfg.layers, rng);
    }
    init_final_norm(store, BLOCKS_GROUP, cfg.d_llm);
    Ok(())
}

fn check_ids(ids: &[usize], vocab_size: usize) -> Result<()> {
    match ids.iter().find(|&&i| i >= vocab_size) {
        Some(bad) => Err(Error::Index(format!("token id {bad} outside vocabulary of {vocab_size}"))),
        None => Ok(()),
    }
}

/// Rows of the embedding table for `ids`.
pub fn embed_text<S: Scalar>(store: &ParamStore<S>, ids: &[usize]) -> Result<Array2<S>> {
    let table = store.get(&tokens_key())?;
    check_ids(ids, table.nrows())?;
    Ok(table.select(ndarray::Axis(0), ids))
}

pub fn embed_graph<S: Scalar>(g: &mut Graph<S>, b: &mut Binder<'_, S>, ids: &[usize]) -> Result<NodeId> {
    let table = b.get(g, &tokens_key())?;
    check_ids(ids, g.value(table).nrows())?;
    Ok(g.gather(table, ids))
}

/// Per-position next-token targets; [`IGNORE_INDEX`] where unsupervised.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LossMask {
    pub targets: Vec<i64>,
}

impl LossMask {
    /// Mask for `prefix` unsupervised rows followed by `report` tokens.
    /// Position `t` predicts token `t + 1`.
    pub fn for_report(prefix: usize, report: &[usize]) -> Self {
        let n = prefix + report.len();
        let targets = (0..n)
            .map(|t| {
                if t + 1 >= prefix && t + 1 < n {
                    report[t + 1 - prefix] as i64
                } else {
                    IGNORE_INDEX
                }
            })
            .collect();
        Self { targets }
    }

    pub fn supervised(&self) -> usize {
        self.targets.iter().filter(|&&t| t != IGNORE_INDEX).count()
    }
}

/// `U = [Z_vis; prompt; report]` on the tape, with its loss mask. The mask
/// is empty when no report is given.
pub fn assemble_graph<S: Scalar>(
    g: &mut Graph<S>,
    b: &mut Binder<'_, S>,
    z_vis: Option<NodeId>,
    prompt: &[usize],
    report: Option<&[usize]>,
) -> Result<(NodeId, LossMask)> {
    let mut parts = Vec::new();
    let mut prefix = 0;
    if let Some(z) = z_vis {
        prefix += g.value(z).nrows();
        parts.push(z);
    }
    if !prompt.is_empty() {
        prefix += prompt.len();
        parts.push(embed_graph(g, b, prompt)?);
    }
    let mut mask = LossMask::default();
    if let Some(report) = report.filter(|r| !r.is_empty()) {
        parts.push(embed_graph(g, b, report)?);
        mask = LossMask::for_report(prefix, report);
    }
    if parts.is_empty() {
        return Err(Error::Shape("empty LM input".into()));
    }
    Ok((g.concat_rows(&parts), mask))
}

pub fn assemble_input<S: Scalar>(
    store: &ParamStore<S>,
    z_vis: &Array2<S>,
    prompt: &[usize],
    report: Option<&[usize]>,
) -> Result<(Array2<S>, LossMask)> {
    let mut g = Graph::new();
    let mut b = Binder::new(store, &frozen);
    let z = (z_vis.nrows() > 0).then(|| g.constant(z_vis.clone()));
    let (u, mask) = assemble_graph(&mut g, &mut b, z, prompt, report)?;
    Ok((g.value(u).clone(), mask))
}

/// Causal LM over input rows `u`; returns one logit row per input row.
pub fn lm_forward_graph<S: Scalar>(
    g: &mut Graph<S>,
    b: &mut Binder<'_, S>,
    cfg: &LmConfig,
    u: NodeId,
    lora: Option<LoraSpec>,
) -> Result<NodeId> {
    let n = g.value(u).nrows();
    if n == 0 || n > cfg.max_len {
        return Err(Error::Shape(format!("LM input of {n} rows (max {})", cfg.max_len)));
    }
    let pos = b.get(g, &pos_key())?;
    let ids: Vec<usize> = (0..n).collect();
    let pos = g.gather(pos, &ids);
    let mut x = g.add(u, pos);
    for i in 0..cfg.layers {
        x = block_forward(g, b, BLOCKS_GROUP, i, x, cfg.block_spec(), true, lora)?;
    }
    let h = layer_norm(g, b, x, &key(BLOCKS_GROUP, "final"))?;
    let table = b.get(g, &tokens_key())?;
    Ok(g.matmul_t(h, table))
}

pub fn lm_forward<S: Scalar>(store: &ParamStore<S>, cfg: &LmConfig, u: &Array2<S>, lora: Option<LoraSpec>) -> Result<Array2<S>> {
    let mut g = Graph::new();
    let mut b = Binder::new(store, &frozen);
    let u = g.constant(u.clone());
    let logits = lm_forward_graph(&mut g, &mut b, cfg, u, lora)?;
    Ok(g.value(logits).clone())
}

pub fn masked_loss_graph<S: Scalar>(g: &mut Graph<S>, logits: NodeId, mask: &LossMask) -> Result<NodeId> {
    if g.value(logits).nrows() != mask.targets.len() {
        return Err(Error::Shape("loss mask length differs from logit rows".into()));
    }
    g.cross_entropy(logits, &mask.targets)
        .ok_or_else(|| Error::Domain("no supervised positions".into()))
}

/// Mean cross-entropy over the supervised positions of `mask`.
pub fn masked_next_token_loss<S: Scalar>(logits: &Array2<S>, mask: &LossMask) -> Result<S> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = masked_loss_graph(&mut g, l, mask)?;
    Ok(g.scalar(loss))
}

fn attn_weight_key(block: usize, map: &str) -> String {
    key(BLOCKS_GROUP, &format!("{block}.attn.{map}"))
}

fn adapter_key(block: usize, map: &str, factor: &str) -> String {
    key(&lora_group(block), &format!("{map}.{factor}"))
}

/// Adds LoRA factors to every attention projection: A ~ N(0, 1/d_in), B = 0.
/// Base weights are left untouched.
pub fn lora_inject<S: Scalar, R: Rng>(store: &mut ParamStore<S>, cfg: &LmConfig, spec: LoraSpec, rng: &mut R) -> Result<()> {
    for i in 0..cfg.layers {
        for map in ATTN_MAPS {
            let (d_out, d_in) = store.get(&attn_weight_key(i, map))?.dim();
            if spec.rank == 0 || spec.rank > d_out.min(d_in) {
                return Err(Error::Config(format!(
                    "LoRA rank {} invalid for a {d_out}x{d_in} matrix",
                    spec.rank
                )));
            }
            let a = normal_matrix(rng, spec.rank, d_in, 1.0 / (d_in as f64).sqrt());
            store.insert(adapter_key(i, map, "a"), a);
            store.insert(adapter_key(i, map, "b"), Array2::zeros((d_out, spec.rank)));
        }
    }
    Ok(())
}

/// Folds `(alpha / r) B A` into each base weight and drops the adapters.
pub fn lora_merge<S: Scalar>(store: &ParamStore<S>, cfg: &LmConfig, spec: LoraSpec) -> Result<ParamStore<S>> {
    let mut merged = store.clone();
    let scale = cast::<S>(spec.scaling());
    for i in 0..cfg.layers {
        for map in ATTN_MAPS {
            let a_key = adapter_key(i, map, "a");
            if !store.contains(&a_key) {
                continue;
            }
            let a = store.get(&a_key)?;
            let bm = store.get(&adapter_key(i, map, "b"))?;
            let delta = bm.dot(a) * scale;
            let w = merged.get_mut(&attn_weight_key(i, map))?;
            if w.dim() != delta.dim() {
                return Err(Error::Shape(format!("adapter shape {:?} vs weight {:?}", delta.dim(), w.dim())));
            }
            *w += &delta;
        }
        merged.remove_group(&lora_group(i));
    }
    Ok(merged)
}

/// True when any adapter group is present.
pub fn has_adapters<S: Scalar>(store: &ParamStore<S>) -> bool {
    store.groups().iter().any(|g| g.starts_with("lora."))
}

/// Mean per-token log-likelihood of `report` given the prefix rows.
pub fn report_log_likelihood<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &LmConfig,
    z_vis: &Array2<S>,
    prompt: &[usize],
    report: &[usize],
    lora: Option<LoraSpec>,
) -> Result<f64> {
    let (u, mask) = assemble_input(store, z_vis, prompt, Some(report))?;
    let logits = lm_forward(store, cfg, &u, lora)?;
    let loss = masked_next_token_loss(&logits, &mask)?;
    Ok(-loss.to_f64().unwrap_or(f64::NAN))
}

/// Last row of a logit matrix as `f64`.
pub fn last_row<S: Scalar>(logits: &Array2<S>) -> Vec<f64> {
    logits
        .slice(s![logits.nrows() - 1, ..])
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect()
}
