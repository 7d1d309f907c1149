//! Incremental decoding with cached keys and values.

use ndarray::{concatenate, s, Array2, Axis};

use crate::autograd::{cast, gelu, normalize_rows, softmax_in_place, Scalar};
use crate::error::{Error, Result};
use crate::params::{key, ParamStore};

use super::{pos_key, tokens_key, LmConfig, BLOCKS_GROUP};

/// Per-layer key/value cache over a store without adapters (merge them first).
pub struct KvCache<'a, S: Scalar> {
    store: &'a ParamStore<S>,
    cfg: LmConfig,
    keys: Vec<Array2<S>>,
    values: Vec<Array2<S>>,
    len: usize,
}

impl<'a, S: Scalar> KvCache<'a, S> {
    pub fn new(store: &'a ParamStore<S>, cfg: LmConfig) -> Result<Self> {
        if super::has_adapters(store) {
            return Err(Error::Config("merge LoRA adapters before caching".into()));
        }
        let empty = Array2::zeros((0, cfg.d_llm));
        Ok(Self {
            store,
            cfg,
            keys: vec![empty.clone(); cfg.layers],
            values: vec![empty; cfg.layers],
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn p(&self, block: usize, name: &str) -> Result<&'a Array2<S>> {
        self.store.get(&key(BLOCKS_GROUP, &format!("{block}.{name}")))
    }

    /// Appends input rows and returns their logits.
    pub fn extend(&mut self, rows: &Array2<S>) -> Result<Array2<S>> {
        let m = rows.nrows();
        if m == 0 || self.len + m > self.cfg.max_len {
            return Err(Error::Shape(format!(
                "cannot extend {} cached rows by {m} (max {})",
                self.len, self.cfg.max_len
            )));
        }
        let pos = self.store.get(&pos_key())?;
        let mut x = rows + &pos.slice(s![self.len..self.len + m, ..]);
        let dh = self.cfg.d_llm / self.cfg.heads;
        let scale = cast::<S>(1.0 / (dh as f64).sqrt());
        for i in 0..self.cfg.layers {
            let h = norm(&x, self.p(i, "ln1.g")?, self.p(i, "ln1.b")?);
            let q = h.dot(&self.p(i, "attn.wq")?.t());
            let k_new = h.dot(&self.p(i, "attn.wk")?.t());
            let v_new = h.dot(&self.p(i, "attn.wv")?.t());
            self.keys[i] = concatenate![Axis(0), self.keys[i], k_new];
            self.values[i] = concatenate![Axis(0), self.values[i], v_new];
            let (kc, vc) = (&self.keys[i], &self.values[i]);
            let total = kc.nrows();
            let mut cat = Array2::zeros((m, self.cfg.d_llm));
            for hd in 0..self.cfg.heads {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let mut scores = q.slice(cols).dot(&kc.slice(cols).t()) * scale;
                for (r, mut row) in scores.rows_mut().into_iter().enumerate() {
                    let visible = self.len + r + 1;
                    row.slice_mut(s![visible..total]).fill(S::neg_infinity());
                    softmax_in_place(row.as_slice_mut().expect("contiguous"));
                    row.slice_mut(s![visible..total]).fill(S::zero());
                }
                cat.slice_mut(cols).assign(&scores.dot(&vc.slice(cols)));
            }
            x = x + cat.dot(&self.p(i, "attn.wo")?.t());
            let h = norm(&x, self.p(i, "ln2.g")?, self.p(i, "ln2.b")?);
            let h = (h.dot(&self.p(i, "mlp.w1")?.t()) + self.p(i, "mlp.b1")?).mapv(gelu);
            x = x + h.dot(&self.p(i, "mlp.w2")?.t()) + self.p(i, "mlp.b2")?;
        }
        self.len += m;
        let h = norm(
            &x,
            self.store.get(&key(BLOCKS_GROUP, "final.g"))?,
            self.store.get(&key(BLOCKS_GROUP, "final.b"))?,
        );
        Ok(h.dot(&self.store.get(&tokens_key())?.t()))
    }

    /// Appends one token by id and returns its logit row.
    pub fn push_token(&mut self, id: usize) -> Result<Array2<S>> {
        let row = super::embed_text(self.store, &[id])?;
        self.extend(&row)
    }
}

fn norm<S: Scalar>(x: &Array2<S>, g: &Array2<S>, b: &Array2<S>) -> Array2<S> {
    normalize_rows(x).0 * g + b
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::params::normal_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cached_decoding_matches_full_forward() {
        let cfg = LmConfig {
            vocab_size: 10,
            d_llm: 12,
            heads: 3,
            layers: 2,
            mlp_hidden: 20,
            max_len: 16,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f64>::new();
        init_lm(&mut store, &cfg, &mut rng).unwrap();
        let prefix = normal_matrix::<f64, _>(&mut rng, 5, 12, 1.0);
        let ids = [4, 7, 2, 9];
        let mut cache = KvCache::new(&store, cfg).unwrap();
        let mut got = vec![cache.extend(&prefix).unwrap()];
        for &id in &ids {
            got.push(cache.push_token(id).unwrap());
        }
        let full_in = concatenate![Axis(0), prefix, embed_text(&store, &ids).unwrap()];
        let full = lm_forward(&store, &cfg, &full_in, None).unwrap();
        let views: Vec<_> = got.iter().map(|a| a.view()).collect();
        let inc = concatenate(Axis(0), &views).unwrap();
        assert_eq!(inc.dim(), full.dim());
        assert!(inc.iter().zip(full.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
        assert_eq!(cache.len(), 9);
    }
}
