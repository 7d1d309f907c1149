//! The assembled model: encoder, bridge, language model and contrastive head.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{cast, Graph, NodeId, Scalar};
use crate::bridge::{bridge_graph, init_bridge, BridgeConfig};
use crate::encoder::{init_encoder, sincos_2d, EncoderConfig, PatchEmbedKernel2D};
use crate::error::{Error, Result};
use crate::langmodel::{
    assemble_graph, has_adapters, init_lm, lm_forward_graph, lora_inject, lora_merge, masked_loss_graph, LmConfig,
    Vocabulary, CANONICAL_PROMPT, EOS,
};
use crate::nn::LoraSpec;
use crate::params::{frozen, key, Binder, ParamStore};
use crate::synth::derive_seed;
use crate::volume::{Dims, Volume};

pub const TAU_GROUP: &str = "contrastive.tau";
pub const TAU_INIT: f64 = 0.07;
pub const TAU_RANGE: (f64, f64) = (1e-3, 10.0);

pub fn tau_key() -> String {
    key(TAU_GROUP, "tau")
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dims: Dims,
    pub patch: Dims,
    pub d_v: usize,
    pub encoder_heads: usize,
    pub encoder_layers: usize,
    pub encoder_mlp: usize,
    /// Visual tokens after compression.
    pub k: usize,
    pub d_llm: usize,
    pub lm_heads: usize,
    pub lm_layers: usize,
    pub lm_mlp: usize,
    pub max_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dims: Dims::new(16, 32, 32),
            patch: Dims::new(8, 8, 8),
            d_v: 64,
            encoder_heads: 4,
            encoder_layers: 2,
            encoder_mlp: 128,
            k: 32,
            d_llm: 128,
            lm_heads: 4,
            lm_layers: 2,
            lm_mlp: 256,
            max_len: 160,
            lora_rank: 16,
            lora_alpha: 32.0,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            input_dims: self.input_dims,
            patch: self.patch,
            d_v: self.d_v,
            heads: self.encoder_heads,
            layers: self.encoder_layers,
            mlp_hidden: self.encoder_mlp,
        }
    }

    pub fn bridge(&self) -> BridgeConfig {
        BridgeConfig {
            k: self.k,
            d_v: self.d_v,
            d_llm: self.d_llm,
        }
    }

    pub fn lm(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            vocab_size,
            d_llm: self.d_llm,
            heads: self.lm_heads,
            layers: self.lm_layers,
            mlp_hidden: self.lm_mlp,
            max_len: self.max_len,
        }
    }

    pub fn lora(&self) -> LoraSpec {
        LoraSpec {
            rank: self.lora_rank,
            alpha: self.lora_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let enc = self.encoder();
        enc.validate()?;
        if self.k == 0 || self.k > enc.num_tokens() {
            return Err(Error::Config(format!(
                "K = {} must lie in 1..={} encoder tokens",
                self.k,
                enc.num_tokens()
            )));
        }
        if self.lm_heads == 0 || self.d_llm % self.lm_heads != 0 {
            return Err(Error::Config("d_llm not divisible by LM heads".into()));
        }
        if self.lora_rank == 0 || self.lora_rank > self.d_llm {
            return Err(Error::Config(format!("LoRA rank {} out of range", self.lora_rank)));
        }
        if self.max_len <= self.k + 10 {
            return Err(Error::Config("max_len leaves no room for prompt and report".into()));
        }
        Ok(())
    }
}

/// Parameters plus the vocabulary they were built for.
#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Fresh model. The 2D patch kernel is drawn at random and inflated; the
    /// 2D positional table is the sine-cosine grid.
    pub fn init(cfg: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4d4f_4445));
        let mut store = ParamStore::new();
        let enc = cfg.encoder();
        let grid = enc.grid();
        let k2d = PatchEmbedKernel2D::random(&mut rng, cfg.d_v, cfg.patch.height, cfg.patch.width);
        let p2d = sincos_2d(grid.height, grid.width, cfg.d_v);
        init_encoder(&mut store, &enc, &k2d, &p2d, &mut rng)?;
        init_bridge(&mut store, &cfg.bridge(), &mut rng);
        init_lm(&mut store, &cfg.lm(vocab.len()), &mut rng)?;
        store.insert(tau_key(), Array2::from_elem((1, 1), cast(TAU_INIT)));
        Ok(Self { cfg, vocab, store })
    }

    pub fn lm_config(&self) -> LmConfig {
        self.cfg.lm(self.vocab.len())
    }

    pub fn prompt_ids(&self) -> Vec<usize> {
        self.vocab.tokenize(CANONICAL_PROMPT)
    }

    /// Report tokens followed by EOS.
    pub fn report_ids(&self, report: &str) -> Vec<usize> {
        let mut ids = self.vocab.tokenize(report);
        ids.push(EOS);
        ids
    }

    pub fn has_adapters(&self) -> bool {
        has_adapters(&self.store)
    }

    pub fn inject_lora(&mut self, seed: u64) -> Result<()> {
        if self.has_adapters() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4c4f_5241));
        let lm = self.lm_config();
        lora_inject(&mut self.store, &lm, self.cfg.lora(), &mut rng)
    }

    /// Store with adapters folded into the base weights.
    pub fn merged_store(&self) -> Result<ParamStore<S>> {
        lora_merge(&self.store, &self.lm_config(), self.cfg.lora())
    }

    /// Encoder output tokens for a volume, on the tape.
    pub fn encode_graph(&self, g: &mut Graph<S>, b: &mut Binder<'_, S>, volume: &Volume) -> Result<NodeId> {
        crate::encoder::encode_graph(g, b, &self.cfg.encoder(), volume)
    }

    /// Encoder output with all encoder groups treated as constants.
    pub fn encode(&self, volume: &Volume) -> Result<Array2<S>> {
        crate::encoder::encode_volume(&self.store, &self.cfg.encoder(), volume)
    }

    /// `Z_vis` (K x d_llm) from encoder tokens.
    pub fn visual_graph(&self, g: &mut Graph<S>, b: &mut Binder<'_, S>, z_enc: NodeId) -> Result<NodeId> {
        bridge_graph(g, b, z_enc, self.cfg.k)
    }

    /// Masked next-token loss of one report given its encoder tokens.
    pub fn report_loss_graph(
        &self,
        g: &mut Graph<S>,
        b: &mut Binder<'_, S>,
        z_enc: NodeId,
        report_ids: &[usize],
    ) -> Result<NodeId> {
        let z_vis = self.visual_graph(g, b, z_enc)?;
        self.prefixed_loss_graph(g, b, z_vis, report_ids)
    }

    /// Masked loss of `report_ids` after the given prefix rows and the prompt.
    pub fn prefixed_loss_graph(
        &self,
        g: &mut Graph<S>,
        b: &mut Binder<'_, S>,
        prefix: NodeId,
        report_ids: &[usize],
    ) -> Result<NodeId> {
        let prompt = self.prompt_ids();
        let (u, mask) = assemble_graph(g, b, Some(prefix), &prompt, Some(report_ids))?;
        let logits = lm_forward_graph(g, b, &self.lm_config(), u, Some(self.cfg.lora()))?;
        masked_loss_graph(g, logits, &mask)
    }

    /// Visual prefix for a volume without gradients.
    pub fn visual_tokens(&self, volume: &Volume) -> Result<Array2<S>> {
        let z = self.encode(volume)?;
        crate::bridge::bridge_forward(&self.store, &z, self.cfg.k)
    }

    /// Mean per-token log-likelihood of `report` given `volume`.
    pub fn report_log_likelihood(&self, volume: &Volume, report: &str) -> Result<f64> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.store, &frozen);
        let z = self.encode_graph(&mut g, &mut b, volume)?;
        let ids = self.report_ids(report);
        let loss = self.report_loss_graph(&mut g, &mut b, z, &ids)?;
        Ok(-g.scalar(loss).to_f64().unwrap_or(f64::NAN))
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            cfg: self.cfg,
            vocab: self.vocab.clone(),
            store: self.store.cast(),
        }
    }
}
