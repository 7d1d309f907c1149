//! Conservative stochastic decoding: repetition penalty, trigram blocking,
//! temperature, nucleus filtering and seeded sampling, in that order.

use std::collections::HashSet;

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Scalar;
use crate::error::{Error, Result};
use crate::langmodel::{embed_text, last_row, KvCache, LmConfig, EOS};
use crate::model::Model;
use crate::params::ParamStore;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub trigram_blocking: bool,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            top_p: 0.9,
            repetition_penalty: 1.2,
            trigram_blocking: true,
            max_new_tokens: 96,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("top_p must lie in (0, 1]".into()));
        }
        if !(self.repetition_penalty >= 1.0) {
            return Err(Error::Config("repetition penalty must be >= 1".into()));
        }
        Ok(())
    }
}

/// Divides positive and multiplies non-positive logits of every token seen
/// in `history` by `theta`, once per distinct token.
pub fn apply_repetition_penalty(logits: &mut [f64], history: &[usize], theta: f64) {
    let seen: HashSet<usize> = history.iter().copied().collect();
    for id in seen {
        if let Some(l) = logits.get_mut(id) {
            *l = if *l > 0.0 { *l / theta } else { *l * theta };
        }
    }
}

/// Bans every candidate that would repeat a trigram already in `history`.
pub fn trigram_block(logits: &mut [f64], history: &[usize]) {
    let n = history.len();
    if n < 2 {
        return;
    }
    let (a, b) = (history[n - 2], history[n - 1]);
    for w in history.windows(3) {
        if w[0] == a && w[1] == b {
            if let Some(l) = logits.get_mut(w[2]) {
                *l = f64::NEG_INFINITY;
            }
        }
    }
}

/// Keeps the smallest descending-probability prefix with mass >= `p`
/// (ties by ascending id), zeroes the rest and renormalises.
pub fn top_p_filter(probs: &[f64], p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let mut mass = 0.0;
    for &i in &order {
        if probs[i] <= 0.0 {
            break;
        }
        out[i] = probs[i];
        mass += probs[i];
        if mass >= p - 1e-12 {
            break;
        }
    }
    if mass > 0.0 {
        out.iter_mut().for_each(|v| *v /= mass);
    }
    out
}

fn softmax(logits: &[f64]) -> Option<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return None;
    }
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    Some(e.into_iter().map(|v| v / sum).collect())
}

/// Sampling distribution for the next token, or `None` when every
/// candidate is banned.
pub fn next_token_distribution(logits: &[f64], history: &[usize], cfg: &DecodeConfig) -> Option<Vec<f64>> {
    let mut l = logits.to_vec();
    apply_repetition_penalty(&mut l, history, cfg.repetition_penalty);
    if cfg.trigram_blocking {
        trigram_block(&mut l, history);
    }
    l.iter_mut().for_each(|v| *v /= cfg.temperature);
    let probs = softmax(&l)?;
    Some(top_p_filter(&probs, cfg.top_p))
}

fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// Token-level decoding from prefix rows over a store without adapters.
pub fn generate_ids<S: Scalar>(
    store: &ParamStore<S>,
    lm: LmConfig,
    prefix: &Array2<S>,
    cfg: &DecodeConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = KvCache::new(store, lm)?;
    let mut logits = cache.extend(prefix)?;
    let mut out = Vec::new();
    while out.len() < cfg.max_new_tokens && cache.len() < lm.max_len {
        let row = last_row(&logits);
        let Some(probs) = next_token_distribution(&row, &out, cfg) else {
            break;
        };
        let id = sample(&probs, &mut rng);
        if id == EOS {
            break;
        }
        out.push(id);
        if cache.len() == lm.max_len {
            break;
        }
        logits = cache.push_token(id)?;
    }
    Ok(out)
}

/// Greedy argmax decoding without penalties, the zero-temperature oracle.
pub fn greedy_ids<S: Scalar>(store: &ParamStore<S>, lm: LmConfig, prefix: &Array2<S>, max_new: usize) -> Result<Vec<usize>> {
    let mut cache = KvCache::new(store, lm)?;
    let mut logits = cache.extend(prefix)?;
    let mut out = Vec::new();
    while out.len() < max_new {
        let row = last_row(&logits);
        let id = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        if id == EOS || cache.len() == lm.max_len {
            break;
        }
        out.push(id);
        logits = cache.push_token(id)?;
    }
    Ok(out)
}

/// Decoder input for a volume: `[Z_vis; prompt]`.
pub fn decode_prefix<S: Scalar>(model: &Model<S>, store: &ParamStore<S>, volume: &Volume) -> Result<Array2<S>> {
    let z_vis = model.visual_tokens(volume)?;
    let prompt = embed_text(store, &model.prompt_ids())?;
    Ok(concatenate![Axis(0), z_vis, prompt])
}

/// Generates a report for `volume`.
pub fn generate<S: Scalar>(model: &Model<S>, volume: &Volume, cfg: &DecodeConfig) -> Result<String> {
    let store = model.merged_store()?;
    let prefix = decode_prefix(model, &store, volume)?;
    let ids = generate_ids(&store, model.lm_config(), &prefix, cfg)?;
    Ok(model.vocab.detokenize(&ids))
}
