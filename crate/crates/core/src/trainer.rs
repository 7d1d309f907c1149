//! Staged alignment training: contrastive warm-up, projector-only tuning and
//! joint projector + LoRA tuning.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{cast, Graph, NodeId, Scalar};
use crate::error::{Error, Result};
use crate::langmodel::{embed_graph, tokens_key, EOS};
use crate::model::{tau_key, Model, TAU_RANGE};
use crate::params::{frozen, group_of, Binder, ParamStore};
use crate::synth::derive_seed;
use crate::volume::Volume;

/// Training phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Contrastive alignment of the patch embedding, depth positions and bridge.
    #[serde(rename = "1")]
    One,
    /// Projector and gate only.
    #[serde(rename = "2a")]
    TwoA,
    /// Projector, gate and LoRA adapters.
    #[serde(rename = "2b")]
    TwoB,
}

impl Phase {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Phase::One),
            "2a" => Ok(Phase::TwoA),
            "2b" => Ok(Phase::TwoB),
            other => Err(Error::Config(format!("unknown phase {other:?} (expected 1, 2a or 2b)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::One => "1",
            Phase::TwoA => "2a",
            Phase::TwoB => "2b",
        }
    }

    /// Whether parameters of `group` are updated in this phase.
    pub fn trains(self, group: &str) -> bool {
        match self {
            Phase::One => {
                matches!(group, "encoder.patch3d" | "encoder.pos_depth" | "contrastive.tau")
                    || group.starts_with("bridge.")
            }
            Phase::TwoA => matches!(group, "bridge.proj1" | "bridge.proj2" | "bridge.gate"),
            Phase::TwoB => group.starts_with("bridge.") || group.starts_with("lora."),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    /// Optimizer updates over the whole run; also the cosine horizon.
    pub total_steps: usize,
    pub effective_batch: usize,
    pub micro_batch: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_steps: 10,
            total_steps: 200,
            effective_batch: 128,
            micro_batch: 8,
            early_stop_patience: 15,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup {} must not exceed total steps {} (> 0)",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.micro_batch == 0 || self.effective_batch % self.micro_batch != 0 {
            return Err(Error::Config(format!(
                "effective batch {} not divisible by micro batch {}",
                self.effective_batch, self.micro_batch
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Linear warmup then cosine decay to zero.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let step = step.min(cfg.total_steps);
    if step < cfg.warmup_steps {
        return cfg.base_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let span = cfg.total_steps - cfg.warmup_steps;
    if span == 0 {
        return cfg.base_lr;
    }
    let progress = (step - cfg.warmup_steps) as f64 / span as f64;
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

fn unit<S: Scalar>(x: Array1<S>, what: &str) -> Result<Array1<S>> {
    let norm = x.iter().fold(S::zero(), |a, &v| a + v * v).sqrt();
    if norm <= S::zero() || !norm.is_finite() {
        return Err(Error::Degenerate(format!("{what} has zero norm")));
    }
    Ok(x / norm)
}

/// Unit-norm mean embedding of a report, EOS excluded.
pub fn text_embedding<S: Scalar>(report_ids: &[usize], table: &Array2<S>) -> Result<Array1<S>> {
    let ids: Vec<usize> = report_ids.iter().copied().filter(|&i| i != EOS).collect();
    if ids.is_empty() {
        return Err(Error::Degenerate("empty report".into()));
    }
    if let Some(bad) = ids.iter().find(|&&i| i >= table.nrows()) {
        return Err(Error::Index(format!("token id {bad} outside vocabulary")));
    }
    let t = table.select(ndarray::Axis(0), &ids).mean_axis(ndarray::Axis(0)).expect("non-empty");
    unit(t, "text embedding")
}

/// Unit-norm global visual and text embeddings.
pub fn global_embeddings<S: Scalar>(z_vis: &Array2<S>, report_ids: &[usize], table: &Array2<S>) -> Result<(Array1<S>, Array1<S>)> {
    if z_vis.nrows() == 0 {
        return Err(Error::Degenerate("empty visual input".into()));
    }
    let v = z_vis.mean_axis(ndarray::Axis(0)).expect("non-empty");
    Ok((unit(v, "visual embedding")?, text_embedding(report_ids, table)?))
}

fn check_norm<S: Scalar>(g: &Graph<S>, x: NodeId, what: &str) -> Result<()> {
    let n = g.value(x).iter().fold(S::zero(), |a, &v| a + v * v);
    if n <= S::zero() || !n.is_finite() {
        return Err(Error::Degenerate(format!("{what} has zero norm")));
    }
    Ok(())
}

/// Unit-norm mean of the `Z_vis` rows, on the tape.
pub fn visual_embedding_graph<S: Scalar>(g: &mut Graph<S>, z_vis: NodeId) -> Result<NodeId> {
    let m = g.mean_rows(z_vis);
    check_norm(g, m, "visual embedding")?;
    Ok(g.l2_normalize_rows(m))
}

/// Symmetric InfoNCE on the tape. `v` and `t` are B x d unit rows, `tau` 1x1.
pub fn infonce_graph<S: Scalar>(g: &mut Graph<S>, v: NodeId, t: NodeId, tau: NodeId) -> Result<NodeId> {
    let batch = g.value(v).nrows();
    if batch < 2 || g.value(t).nrows() != batch {
        return Err(Error::Domain(format!("InfoNCE needs matched batches of at least 2, got {batch}")));
    }
    let sims = g.matmul_t(v, t);
    let inv = g.recip(tau);
    let logits = g.scale_by(sims, inv);
    let labels: Vec<i64> = (0..batch as i64).collect();
    let l_vt = g.cross_entropy(logits, &labels).expect("labels present");
    let lt = g.transpose(logits);
    let l_tv = g.cross_entropy(lt, &labels).expect("labels present");
    let sum = g.add(l_vt, l_tv);
    Ok(g.scale(sum, cast(0.5)))
}

pub fn infonce_symmetric<S: Scalar>(v: &Array2<S>, t: &Array2<S>, tau: S) -> Result<S> {
    let mut g = Graph::new();
    let (v, t) = (g.constant(v.clone()), g.constant(t.clone()));
    let tau = g.constant(Array2::from_elem((1, 1), tau));
    let l = infonce_graph(&mut g, v, t, tau)?;
    Ok(g.scalar(l))
}

/// AdamW with decoupled weight decay on matrix-shaped parameters.
#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: BTreeMap<String, Array2<S>>,
    v: BTreeMap<String, Array2<S>>,
    t: i32,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &BTreeMap<String, Array2<S>>, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (cast::<S>(self.beta1), cast::<S>(self.beta2));
        let c1 = cast::<S>(1.0 - self.beta1.powi(self.t));
        let c2 = cast::<S>(1.0 - self.beta2.powi(self.t));
        let lr_s = cast::<S>(lr);
        let eps = cast::<S>(self.eps);
        let decay = cast::<S>(1.0 - lr * self.weight_decay);
        for (k, grad) in grads {
            let p = store.get_mut(k)?;
            let m = self.m.entry(k.clone()).or_insert_with(|| Array2::zeros(grad.dim()));
            let v = self.v.entry(k.clone()).or_insert_with(|| Array2::zeros(grad.dim()));
            if p.nrows() > 1 && p.ncols() > 1 {
                p.mapv_inplace(|x| x * decay);
            }
            ndarray::Zip::from(p).and(m).and(v).and(grad).for_each(|p, m, v, &g| {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr_s * mh / (vh.sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// One (volume, report) training pair.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub volume: &'a Volume,
    pub report: &'a str,
}

/// One JSON-lines metrics record, written after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: String,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PhaseOutcome {
    pub log: Vec<MetricsRecord>,
    pub updates: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn required_groups(phase: Option<Phase>) -> &'static [&'static str] {
    match phase {
        None => &["lm.embed", "lm.blocks"],
        Some(Phase::One) => &[
            "encoder.patch3d",
            "encoder.pos_depth",
            "encoder.pos_spatial",
            "encoder.blocks",
            "bridge.proj1",
            "bridge.proj2",
            "bridge.gate",
            "contrastive.tau",
            "lm.embed",
        ],
        Some(_) => &[
            "encoder.patch3d",
            "encoder.blocks",
            "bridge.proj1",
            "bridge.proj2",
            "bridge.gate",
            "lm.embed",
            "lm.blocks",
        ],
    }
}

fn check_groups<S: Scalar>(store: &ParamStore<S>, phase: Option<Phase>) -> Result<()> {
    let present = store.groups();
    for g in required_groups(phase) {
        if !present.iter().any(|p| p == g) {
            return Err(Error::MissingGroup((*g).to_string()));
        }
    }
    if phase == Some(Phase::TwoB) && !present.iter().any(|p| p.starts_with("lora.")) {
        return Err(Error::MissingGroup("lora.* (inject adapters before phase 2b)".into()));
    }
    Ok(())
}

fn add_grads<S: Scalar>(acc: &mut BTreeMap<String, Array2<S>>, grads: Vec<(String, Array2<S>)>) {
    for (k, g) in grads {
        match acc.get_mut(&k) {
            Some(a) => *a += &g,
            None => {
                acc.insert(k, g);
            }
        }
    }
}

fn finite(x: f64, what: &str, update: usize) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Training(format!("non-finite {what} ({x}) at update {update}")))
    }
}

/// What a training run optimises.
enum Objective {
    Contrastive,
    Report,
    /// Text-only LM warm-up with a prefix derived from the report embedding.
    TextPrefix,
}

struct Runner<'m, 'd, S: Scalar> {
    model: &'m mut Model<S>,
    train: &'d [Example<'d>],
    val: &'d [Example<'d>],
    cfg: TrainConfig,
    objective: Objective,
    trainable: Box<dyn Fn(&str) -> bool>,
    label: String,
    /// Cached encoder outputs, when the encoder is frozen.
    cache: Vec<Array2<S>>,
    val_cache: Vec<Array2<S>>,
}

impl<S: Scalar> Runner<'_, '_, S> {
    fn z_enc(&self, g: &mut Graph<S>, b: &mut Binder<'_, S>, i: usize, val: bool) -> Result<NodeId> {
        let (set, cache) = if val { (self.val, &self.val_cache) } else { (self.train, &self.cache) };
        if let Some(z) = cache.get(i) {
            return Ok(g.constant(z.clone()));
        }
        self.model.encode_graph(g, b, set[i].volume)
    }

    /// Prefix used by the text-only warm-up: the mean report embedding
    /// repeated K times.
    fn text_prefix(&self, g: &mut Graph<S>, b: &mut Binder<'_, S>, ids: &[usize]) -> Result<NodeId> {
        let body: Vec<usize> = ids.iter().copied().filter(|&i| i != EOS).collect();
        let e = embed_graph(g, b, &body)?;
        let m = g.mean_rows(e);
        Ok(g.gather(m, &vec![0; self.model.cfg.k]))
    }

    fn sample_loss(&self, g: &mut Graph<S>, b: &mut Binder<'_, S>, i: usize, val: bool) -> Result<NodeId> {
        let ex = if val { self.val[i] } else { self.train[i] };
        let ids = self.model.report_ids(ex.report);
        match self.objective {
            Objective::Report => {
                let z = self.z_enc(g, b, i, val)?;
                self.model.report_loss_graph(g, b, z, &ids)
            }
            Objective::TextPrefix => {
                let prefix = self.text_prefix(g, b, &ids)?;
                self.model.prefixed_loss_graph(g, b, prefix, &ids)
            }
            Objective::Contrastive => unreachable!("contrastive loss is batch-level"),
        }
    }

    /// Mean-of-samples loss and its gradient, accumulated over micro-batches.
    fn report_batch(&self, idx: &[usize]) -> Result<(f64, BTreeMap<String, Array2<S>>)> {
        let inv = cast::<S>(1.0 / idx.len() as f64);
        let mut acc = BTreeMap::new();
        let mut total = 0.0;
        for chunk in idx.chunks(self.cfg.micro_batch) {
            let mut g = Graph::new();
            let mut b = Binder::new(&self.model.store, &*self.trainable);
            let mut sum: Option<NodeId> = None;
            for &i in chunk {
                let l = self.sample_loss(&mut g, &mut b, i, false)?;
                sum = Some(match sum {
                    Some(s) => g.add(s, l),
                    None => l,
                });
            }
            let loss = g.scale(sum.expect("non-empty chunk"), inv);
            total += g.scalar(loss).to_f64().unwrap_or(f64::NAN);
            let mut grads = g.backward(loss);
            add_grads(&mut acc, b.collect(&mut grads));
        }
        Ok((total, acc))
    }

    fn visual_values(&self, idx: &[usize], val: bool) -> Result<Array2<S>> {
        let mut rows = Vec::with_capacity(idx.len());
        for &i in idx {
            let mut g = Graph::new();
            let mut b = Binder::new(&self.model.store, &frozen);
            let z = self.z_enc(&mut g, &mut b, i, val)?;
            let zv = self.model.visual_graph(&mut g, &mut b, z)?;
            let v = visual_embedding_graph(&mut g, zv)?;
            rows.push(g.value(v).row(0).to_owned());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::stack(ndarray::Axis(0), &views).expect("equal widths"))
    }

    fn text_values(&self, idx: &[usize], val: bool) -> Result<Array2<S>> {
        let set = if val { self.val } else { self.train };
        let table = self.model.store.get(&tokens_key())?;
        let mut out = Array2::zeros((idx.len(), table.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            let ids = self.model.report_ids(set[i].report);
            out.row_mut(r).assign(&text_embedding(&ids, table)?);
        }
        Ok(out)
    }

    fn contrastive_value(&self, idx: &[usize], val: bool) -> Result<f64> {
        let v = self.visual_values(idx, val)?;
        let t = self.text_values(idx, val)?;
        let tau = self.model.store.get(&tau_key())?[[0, 0]];
        Ok(infonce_symmetric(&v, &t, tau)?.to_f64().unwrap_or(f64::NAN))
    }

    /// Contrastive loss over the whole batch with exact micro-batch
    /// accumulation: embeddings are computed once without gradients, the
    /// loss gradient with respect to them is taken on a small graph, and each
    /// micro-batch then backpropagates `<dL/dv_i, v_i>`.
    fn contrastive_batch(&self, idx: &[usize]) -> Result<(f64, BTreeMap<String, Array2<S>>)> {
        let v = self.visual_values(idx, false)?;
        let t = self.text_values(idx, false)?;
        let mut g = Graph::new();
        let vn = g.leaf(v, true);
        let tn = g.constant(t);
        let tau_val = self.model.store.get(&tau_key())?.clone();
        let tau = g.leaf(tau_val, (self.trainable)("contrastive.tau"));
        let loss = infonce_graph(&mut g, vn, tn, tau)?;
        let value = g.scalar(loss).to_f64().unwrap_or(f64::NAN);
        let mut grads = g.backward(loss);
        let dv = grads.take(vn).unwrap_or_else(|| Array2::zeros((idx.len(), 1)));
        let mut acc = BTreeMap::new();
        if let Some(dt) = grads.take(tau) {
            acc.insert(tau_key(), dt);
        }
        for (c, chunk) in idx.chunks(self.cfg.micro_batch).enumerate() {
            let mut g = Graph::new();
            let mut b = Binder::new(&self.model.store, &*self.trainable);
            let mut sum: Option<NodeId> = None;
            for (j, &i) in chunk.iter().enumerate() {
                let row = c * self.cfg.micro_batch + j;
                let z = self.z_enc(&mut g, &mut b, i, false)?;
                let zv = self.model.visual_graph(&mut g, &mut b, z)?;
                let vi = visual_embedding_graph(&mut g, zv)?;
                let gi = g.constant(dv.row(row).to_owned().insert_axis(ndarray::Axis(0)));
                let dot = g.matmul_t(vi, gi);
                sum = Some(match sum {
                    Some(s) => g.add(s, dot),
                    None => dot,
                });
            }
            let surrogate = sum.expect("non-empty chunk");
            let mut grads = g.backward(surrogate);
            add_grads(&mut acc, b.collect(&mut grads));
        }
        Ok((value, acc))
    }

    fn batch(&self, idx: &[usize]) -> Result<(f64, BTreeMap<String, Array2<S>>)> {
        match self.objective {
            Objective::Contrastive => self.contrastive_batch(idx),
            _ => self.report_batch(idx),
        }
    }

    fn validation_loss(&self) -> Result<Option<f64>> {
        let n = self.val.len();
        match self.objective {
            Objective::Contrastive if n >= 2 => {
                let idx: Vec<usize> = (0..n).collect();
                Ok(Some(self.contrastive_value(&idx, true)?))
            }
            Objective::Contrastive => Ok(None),
            _ if n == 0 => Ok(None),
            _ => {
                let mut total = 0.0;
                for i in 0..n {
                    let mut g = Graph::new();
                    let mut b = Binder::new(&self.model.store, &frozen);
                    let l = self.sample_loss(&mut g, &mut b, i, true)?;
                    total += g.scalar(l).to_f64().unwrap_or(f64::NAN);
                }
                Ok(Some(total / n as f64))
            }
        }
    }

    fn run(self) -> Result<PhaseOutcome> {
        self.cfg.validate()?;
        let min_batch = if matches!(self.objective, Objective::Contrastive) { 2 } else { 1 };
        if self.train.len() < min_batch {
            return Err(Error::Config(format!("need at least {min_batch} training examples")));
        }
        let mut opt = AdamW::<S>::new(self.cfg.weight_decay);
        let mut out = PhaseOutcome {
            best_val_loss: f64::INFINITY,
            ..Default::default()
        };
        let mut best: Option<ParamStore<S>> = None;
        let mut stale = 0usize;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut epoch = 0usize;
        let mut lr = 0.0;
        while out.updates < self.cfg.total_steps {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch as u64));
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for idx in order.chunks(self.cfg.effective_batch) {
                if idx.len() < min_batch || out.updates >= self.cfg.total_steps {
                    continue;
                }
                let (loss, grads) = self.batch(idx)?;
                finite(loss, "training loss", out.updates)?;
                if let Some((k, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                    return Err(Error::Training(format!("non-finite gradient for {k} at update {}", out.updates)));
                }
                lr = lr_at(out.updates + 1, &self.cfg);
                opt.step(&mut self.model.store, &grads, lr)?;
                clamp_tau(&mut self.model.store);
                out.updates += 1;
                epoch_loss += loss;
                batches += 1;
            }
            if batches == 0 {
                return Err(Error::Config("no batch could be formed from the training set".into()));
            }
            let train_loss = epoch_loss / batches as f64;
            let val_loss = match self.validation_loss()? {
                Some(v) => finite(v, "validation loss", out.updates)?,
                None => train_loss,
            };
            out.log.push(MetricsRecord {
                step: out.updates,
                epoch,
                phase: self.label.clone(),
                train_loss,
                val_loss,
                lr,
            });
            if val_loss < out.best_val_loss {
                out.best_val_loss = val_loss;
                best = Some(self.model.store.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.early_stop_patience {
                    out.stopped_early = true;
                    break;
                }
            }
            epoch += 1;
        }
        if let Some(best) = best {
            self.model.store = best;
        }
        Ok(out)
    }
}

fn clamp_tau<S: Scalar>(store: &mut ParamStore<S>) {
    if let Ok(t) = store.get_mut(&tau_key()) {
        let (lo, hi) = (cast::<S>(TAU_RANGE.0), cast::<S>(TAU_RANGE.1));
        t.mapv_inplace(|v| v.max(lo).min(hi));
    }
}

/// Runs one phase in place. Only the phase's trainable groups change.
pub fn run_phase<S: Scalar>(
    model: &mut Model<S>,
    phase: Phase,
    train: &[Example<'_>],
    val: &[Example<'_>],
    cfg: &TrainConfig,
) -> Result<PhaseOutcome> {
    check_groups(&model.store, Some(phase))?;
    let cache_encoder = phase != Phase::One;
    let encode_all = |set: &[Example<'_>]| -> Result<Vec<Array2<S>>> {
        if cache_encoder {
            set.iter().map(|e| model.encode(e.volume)).collect()
        } else {
            Ok(Vec::new())
        }
    };
    let cache = encode_all(train)?;
    let val_cache = encode_all(val)?;
    Runner {
        model,
        train,
        val,
        cfg: *cfg,
        objective: if phase == Phase::One { Objective::Contrastive } else { Objective::Report },
        trainable: Box::new(move |g: &str| phase.trains(g)),
        label: phase.to_string(),
        cache,
        val_cache,
    }
    .run()
}

/// Text-only warm-up of the language model, standing in for a pretrained
/// foundation model. Every `lm.*` group is trained; each report is
/// conditioned on its own mean token embedding in the visual slots.
pub fn pretrain_lm<S: Scalar>(
    model: &mut Model<S>,
    train: &[Example<'_>],
    val: &[Example<'_>],
    cfg: &TrainConfig,
) -> Result<PhaseOutcome> {
    check_groups(&model.store, None)?;
    Runner {
        model,
        train,
        val,
        cfg: *cfg,
        objective: Objective::TextPrefix,
        trainable: Box::new(|g: &str| group_of(g).starts_with("lm.")),
        label: "lm".into(),
        cache: Vec::new(),
        val_cache: Vec::new(),
    }
    .run()
}

/// Bytes of every parameter in `group`, in key order.
pub fn group_bytes<S: Scalar>(store: &ParamStore<S>, group: &str) -> Vec<u8> {
    store
        .group(group)
        .into_iter()
        .flat_map(|(_, a)| a.iter().flat_map(|v| v.to_f64().unwrap_or(f64::NAN).to_le_bytes()).collect::<Vec<_>>())
        .collect()
}
