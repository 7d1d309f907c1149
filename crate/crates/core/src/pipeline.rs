//! Stage sequencing shared by the command-line tool and the test suites.

use serde::{Deserialize, Serialize};

use crate::autograd::Scalar;
use crate::decoder::{decode_prefix, generate_ids, DecodeConfig};
use crate::error::{Error, Result};
use crate::langmodel::{Vocabulary, CANONICAL_PROMPT};
use crate::model::Model;
use crate::synth::templates::all_renderings;
use crate::synth::{CohortConfig, SubjectRecord};
use crate::trainer::{pretrain_lm, run_phase, Example, Phase, PhaseOutcome, TrainConfig};
use crate::volume::Volume;

/// Stage label of the text-only language-model warm-up.
pub const LM_STAGE: &str = "lm";

/// Vocabulary over the prompt and every report the template bank can emit.
pub fn report_vocabulary() -> Vocabulary {
    let bank = all_renderings();
    Vocabulary::build(std::iter::once(CANONICAL_PROMPT).chain(bank.iter().map(|(r, _)| r.as_str())))
}

/// Training pairs for the listed subject ids, in list order.
pub fn examples_for<'a>(cohort: &'a [SubjectRecord], ids: &[String]) -> Result<Vec<Example<'a>>> {
    ids.iter()
        .map(|id| {
            cohort
                .iter()
                .find(|s| &s.subject_id == id)
                .map(|s| Example {
                    volume: &s.volume,
                    report: &s.report,
                })
                .ok_or_else(|| Error::Index(format!("unknown subject id {id}")))
        })
        .collect()
}

/// Per-stage optimisation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfigs {
    pub lm: TrainConfig,
    pub phase1: TrainConfig,
    pub phase2a: TrainConfig,
    pub phase2b: TrainConfig,
}

impl Default for StageConfigs {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            lm: TrainConfig { base_lr: 3e-3, ..base },
            phase1: base,
            phase2a: TrainConfig { base_lr: 3e-3, ..base },
            phase2b: TrainConfig { base_lr: 1e-3, ..base },
        }
    }
}

impl StageConfigs {
    /// Fixed-budget settings for the 32-subject smoke cohort: batches of 8,
    /// 200 updates per stage, early stopping effectively off.
    pub fn smoke() -> Self {
        let base = TrainConfig {
            base_lr: 3e-3,
            warmup_steps: 10,
            total_steps: 200,
            effective_batch: 8,
            micro_batch: 8,
            early_stop_patience: 1000,
            weight_decay: 0.01,
            seed: 0,
        };
        Self {
            lm: base,
            phase1: base,
            phase2a: TrainConfig { base_lr: 1e-2, ..base },
            phase2b: base,
        }
    }

    pub fn get(&self, stage: &str) -> Result<&TrainConfig> {
        match stage {
            LM_STAGE => Ok(&self.lm),
            "1" => Ok(&self.phase1),
            "2a" => Ok(&self.phase2a),
            "2b" => Ok(&self.phase2b),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }

    /// Same settings with every stage seeded from `seed`.
    pub fn reseeded(mut self, seed: u64) -> Self {
        for (i, c) in [&mut self.lm, &mut self.phase1, &mut self.phase2a, &mut self.phase2b]
            .into_iter()
            .enumerate()
        {
            c.seed = crate::synth::derive_seed(seed, 0x5354_4147 + i as u64);
        }
        self
    }
}

/// 32 subjects (24 pathological, 8 healthy) at the default desk dims.
pub fn smoke_cohort_config(seed: u64) -> CohortConfig {
    CohortConfig {
        n_pathological: 24,
        n_healthy: 8,
        seed,
        ..CohortConfig::default()
    }
}

/// Stage that must directly precede `phase`.
pub fn required_predecessor(phase: Phase) -> &'static str {
    match phase {
        Phase::One => LM_STAGE,
        Phase::TwoA => "1",
        Phase::TwoB => "2a",
    }
}

/// Runs one stage, injecting adapters before phase 2b.
pub fn run_stage<S: Scalar>(
    model: &mut Model<S>,
    stage: &str,
    train: &[Example<'_>],
    val: &[Example<'_>],
    stages: &StageConfigs,
) -> Result<PhaseOutcome> {
    let cfg = stages.get(stage)?;
    if stage == LM_STAGE {
        return pretrain_lm(model, train, val, cfg);
    }
    let phase = Phase::parse(stage)?;
    if phase == Phase::TwoB {
        model.inject_lora(cfg.seed)?;
    }
    run_phase(model, phase, train, val, cfg)
}

/// Runs the listed stages in order and returns their outcomes.
pub fn run_stages<S: Scalar>(
    model: &mut Model<S>,
    stages_to_run: &[&str],
    train: &[Example<'_>],
    val: &[Example<'_>],
    stages: &StageConfigs,
) -> Result<Vec<(String, PhaseOutcome)>> {
    stages_to_run
        .iter()
        .map(|s| Ok((s.to_string(), run_stage(model, s, train, val, stages)?)))
        .collect()
}

/// Generates one report per volume, merging adapters once.
pub fn generate_reports<S: Scalar>(model: &Model<S>, volumes: &[&Volume], cfg: &DecodeConfig) -> Result<Vec<String>> {
    let store = model.merged_store()?;
    volumes
        .iter()
        .map(|v| {
            let prefix = decode_prefix(model, &store, v)?;
            let ids = generate_ids(&store, model.lm_config(), &prefix, cfg)?;
            Ok(model.vocab.detokenize(&ids))
        })
        .collect()
}
