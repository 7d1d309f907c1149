//! Experiment pipeline behind the `brain3d` command: synthetic cohort
//! generation, staged training, report generation, scoring and attribution.
//!
//! Everything lives under one experiment directory:
//!
//! ```text
//! cohort/subjects.jsonl   one SubjectEntry per line
//! cohort/splits.json      train/val/test subject ids
//! cohort/volumes/*.bvol
//! checkpoints/phase{1,2a,2b}/
//! metrics/phase{1,2a,2b}.jsonl
//! predictions/{split}.jsonl
//! eval/{split}.json
//! explain/{subject}.bvol, explain/{subject}.json
//! ```

pub mod config;
pub mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use brain3d::checkpoint::{load_checkpoint, save_checkpoint};
use brain3d::decoder::DecodeConfig;
use brain3d::eval::{evaluate_reports, ClinicalFindings, MetricReport};
use brain3d::interpret::{brain_mask, lime_attribute, slic_supervoxels, LimeConfig};
use brain3d::model::Model;
use brain3d::pipeline::{generate_reports, report_vocabulary, required_predecessor, run_stage};
use brain3d::synth::{build_cohort, split_cohort, Lesion, Side, SubjectClass, Splits};
use brain3d::trainer::{Example, MetricsRecord, Phase};
use brain3d::volume::{read_volume, write_volume, Volume};
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, SplitName};
pub use error::{CliError, CliResult};

/// Environment variable naming the default experiment directory.
pub const DATA_DIR_ENV: &str = "BRAIN3D_DATA_DIR";
pub const LOCK_FILE: &str = ".brain3d.lock";

/// One line of `cohort/subjects.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub class: SubjectClass,
    pub side: Option<Side>,
    /// Path of the BVOL file, relative to the cohort directory.
    pub volume: String,
    pub report: String,
    pub findings: ClinicalFindings,
    pub lesion: Option<Lesion>,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub subject_id: String,
    pub report: String,
    pub seed: u64,
    pub config: DecodeConfig,
}

/// Sidecar written next to an attribution volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSidecar {
    pub subject_id: String,
    /// Checkpoint directory, relative to the experiment directory when inside it.
    pub checkpoint: String,
    pub report: String,
    pub k_sv: usize,
    /// Surrogate coefficient per supervoxel; label `i + 1` owns entry `i`.
    pub weights: Vec<f64>,
    pub supervoxel_sizes: Vec<usize>,
    pub intercept: f64,
    pub r2: f64,
    pub config: LimeConfig,
}

/// Paths inside an experiment directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort")
    }

    pub fn subjects(&self) -> PathBuf {
        self.cohort().join("subjects.jsonl")
    }

    pub fn splits(&self) -> PathBuf {
        self.cohort().join("splits.json")
    }

    pub fn checkpoint(&self, phase: Phase) -> PathBuf {
        self.root.join("checkpoints").join(format!("phase{}", phase.as_str()))
    }

    pub fn metrics(&self, phase: Phase) -> PathBuf {
        self.root.join("metrics").join(format!("phase{}.jsonl", phase.as_str()))
    }

    pub fn predictions(&self, split: SplitName) -> PathBuf {
        self.root.join("predictions").join(format!("{}.jsonl", split.as_str()))
    }

    pub fn evaluation(&self, split: SplitName) -> PathBuf {
        self.root.join("eval").join(format!("{}.json", split.as_str()))
    }

    pub fn explain(&self, subject: &str, ext: &str) -> PathBuf {
        self.root.join("explain").join(format!("{subject}.{ext}"))
    }

    /// Most advanced checkpoint present, 2b first.
    pub fn latest_checkpoint(&self) -> CliResult<PathBuf> {
        [Phase::TwoB, Phase::TwoA, Phase::One]
            .into_iter()
            .map(|p| self.checkpoint(p))
            .find(|p| p.is_dir())
            .ok_or_else(|| CliError::Missing(self.root.join("checkpoints")))
    }
}

/// Exclusive lock on an experiment directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn jsonl<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    if !path.is_file() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}

/// A cohort read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub subjects: Vec<(SubjectEntry, Volume)>,
    pub splits: Splits,
}

impl LoadedCohort {
    pub fn load(layout: &Layout) -> CliResult<Self> {
        let entries: Vec<SubjectEntry> = read_jsonl(&layout.subjects())?;
        let splits_path = layout.splits();
        if !splits_path.is_file() {
            return Err(CliError::Missing(splits_path));
        }
        let splits: Splits = serde_json::from_str(&fs::read_to_string(&splits_path)?)?;
        let subjects = entries
            .into_iter()
            .map(|e| {
                let v = read_volume(layout.cohort().join(&e.volume))?;
                Ok((e, v))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Self { subjects, splits })
    }

    pub fn find(&self, id: &str) -> CliResult<&(SubjectEntry, Volume)> {
        self.subjects
            .iter()
            .find(|(e, _)| e.subject_id == id)
            .ok_or_else(|| CliError::Core(brain3d::Error::Index(format!("unknown subject id {id}"))))
    }

    pub fn examples(&self, split: SplitName) -> CliResult<Vec<Example<'_>>> {
        self.ids(split)
            .iter()
            .map(|id| {
                let (e, v) = self.find(id)?;
                Ok(Example {
                    volume: v,
                    report: &e.report,
                })
            })
            .collect()
    }

    pub fn ids(&self, split: SplitName) -> &[String] {
        self.splits.get(split.as_str()).unwrap_or_default()
    }
}

/// Builds the synthetic cohort and its split into `layout.cohort()`.
pub fn cmd_synth(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<(usize, Splits)> {
    let cohort = build_cohort(&cfg.data.cohort)?;
    let splits = split_cohort(&cohort, cfg.data.splits, cfg.split_seed())?;
    let target = layout.cohort();
    let staging = layout.root.join("cohort.partial");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(staging.join("volumes"))?;
    let mut entries = Vec::with_capacity(cohort.len());
    for s in &cohort {
        let rel = format!("volumes/{}.bvol", s.subject_id);
        write_volume(&s.volume, staging.join(&rel))?;
        entries.push(SubjectEntry {
            subject_id: s.subject_id.clone(),
            class: s.class,
            side: s.side,
            volume: rel,
            report: s.report.clone(),
            findings: s.findings.clone(),
            lesion: s.lesion,
        });
    }
    fs::write(staging.join("subjects.jsonl"), jsonl(&entries)?)?;
    fs::write(staging.join("splits.json"), serde_json::to_vec_pretty(&splits)?)?;
    fs::write(staging.join("data_config.json"), serde_json::to_vec_pretty(&cfg.data)?)?;
    if target.exists() {
        fs::remove_dir_all(&target)?;
    }
    fs::rename(&staging, &target)?;
    Ok((cohort.len(), splits))
}

/// Stages run by `train --phase`.
pub fn stages_for(phase: Phase) -> &'static [&'static str] {
    match phase {
        Phase::One => &["lm", "1"],
        Phase::TwoA => &["2a"],
        Phase::TwoB => &["2b"],
    }
}

fn previous_phase(phase: Phase) -> Option<Phase> {
    match phase {
        Phase::One => None,
        Phase::TwoA => Some(Phase::One),
        Phase::TwoB => Some(Phase::TwoA),
    }
}

/// Loads the checkpoint a phase resumes from and checks its provenance.
fn resume_from(cfg: &ExperimentConfig, layout: &Layout, phase: Phase) -> CliResult<(Model<f32>, Vec<String>)> {
    let Some(prev) = previous_phase(phase) else {
        let model = Model::init(cfg.model, report_vocabulary(), cfg.init_seed())?;
        return Ok((model, Vec::new()));
    };
    let dir = layout.checkpoint(prev);
    let expected = required_predecessor(phase);
    if !dir.is_dir() {
        return Err(brain3d::Error::Provenance(format!(
            "phase {} needs a phase-{expected} checkpoint at {}",
            phase.as_str(),
            dir.display()
        ))
        .into());
    }
    let (model, manifest) = load_checkpoint::<f32>(&dir)?;
    if manifest.last_stage() != Some(expected) {
        return Err(brain3d::Error::Provenance(format!(
            "checkpoint {} ends with stage {:?}, phase {} needs {expected:?}",
            dir.display(),
            manifest.last_stage(),
            phase.as_str()
        ))
        .into());
    }
    if model.cfg != cfg.model {
        return Err(CliError::Usage(format!(
            "model section of the config differs from checkpoint {}",
            dir.display()
        )));
    }
    Ok((model, manifest.provenance))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: Vec<MetricsRecord>,
    pub n_train: usize,
    /// Zero means selection fell back to the training loss.
    pub n_val: usize,
    pub provenance: Vec<String>,
}

/// Runs one training phase and writes its checkpoint and metrics log.
pub fn cmd_train(cfg: &ExperimentConfig, layout: &Layout, phase: Phase) -> CliResult<TrainSummary> {
    let cohort = LoadedCohort::load(layout)?;
    let (mut model, mut provenance) = resume_from(cfg, layout, phase)?;
    let train = cohort.examples(SplitName::Train)?;
    let val = cohort.examples(SplitName::Val)?;
    let mut log = Vec::new();
    for stage in stages_for(phase) {
        let out = run_stage(&mut model, stage, &train, &val, &cfg.train)?;
        log.extend(out.log);
        provenance.push(stage.to_string());
    }
    save_checkpoint(&layout.checkpoint(phase), &model, &provenance, serde_json::to_value(cfg)?)?;
    write_atomic(&layout.metrics(phase), &jsonl(&log)?)?;
    Ok(TrainSummary {
        log,
        n_train: train.len(),
        n_val: val.len(),
        provenance,
    })
}

/// Generates a report for every subject of `split`.
pub fn cmd_generate(
    cfg: &ExperimentConfig,
    layout: &Layout,
    checkpoint: Option<&Path>,
    split: SplitName,
) -> CliResult<Vec<PredictionRecord>> {
    let cohort = LoadedCohort::load(layout)?;
    let dir = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => layout.latest_checkpoint()?,
    };
    let (model, _) = load_checkpoint::<f32>(&dir)?;
    let ids = cohort.ids(split);
    let volumes = ids
        .iter()
        .map(|id| cohort.find(id).map(|(_, v)| v))
        .collect::<CliResult<Vec<_>>>()?;
    let reports = generate_reports(&model, &volumes, &cfg.decode)?;
    let records: Vec<PredictionRecord> = ids
        .iter()
        .zip(reports)
        .map(|(id, report)| PredictionRecord {
            subject_id: id.clone(),
            report,
            seed: cfg.decode.seed,
            config: cfg.decode,
        })
        .collect();
    write_atomic(&layout.predictions(split), &jsonl(&records)?)?;
    Ok(records)
}

/// Scores a predictions file against the cohort's gold reports.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    layout: &Layout,
    predictions: Option<&Path>,
    split: SplitName,
) -> CliResult<MetricReport> {
    let cohort = LoadedCohort::load(layout)?;
    let path = predictions.map_or_else(|| layout.predictions(split), Path::to_path_buf);
    let records: Vec<PredictionRecord> = read_jsonl(&path)?;
    let mut pred = Vec::with_capacity(records.len());
    let mut gold = Vec::with_capacity(records.len());
    let mut healthy = Vec::with_capacity(records.len());
    for r in &records {
        let (e, _) = cohort.find(&r.subject_id)?;
        pred.push(r.report.clone());
        gold.push(e.report.clone());
        healthy.push(e.class == SubjectClass::Healthy);
    }
    let report = evaluate_reports(&pred, &gold, &healthy, cfg.eval.n_boot, cfg.bootstrap_seed())?;
    write_atomic(&layout.evaluation(split), &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

/// Attribution map for one subject against its reference report.
pub fn cmd_explain(
    cfg: &ExperimentConfig,
    layout: &Layout,
    checkpoint: Option<&Path>,
    subject: &str,
) -> CliResult<AttributionSidecar> {
    let cohort = LoadedCohort::load(layout)?;
    let (entry, volume) = cohort.find(subject)?;
    let dir = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => layout.latest_checkpoint()?,
    };
    if !dir.is_dir() {
        return Err(CliError::Missing(dir));
    }
    let (model, _) = load_checkpoint::<f32>(&dir)?;
    let lime = &cfg.interpret;
    let mask = brain_mask(volume, lime.mask_threshold)?;
    let map = slic_supervoxels(volume, &mask, lime.k_sv, lime.compactness)?;
    let att = lime_attribute(&model, volume, &map, &entry.report, lime)?;
    let sidecar = AttributionSidecar {
        subject_id: subject.to_string(),
        checkpoint: dir.strip_prefix(&layout.root).unwrap_or(&dir).display().to_string(),
        report: entry.report.clone(),
        k_sv: map.k,
        weights: att.weights.clone(),
        supervoxel_sizes: map.sizes(),
        intercept: att.intercept,
        r2: att.r2,
        config: *lime,
    };
    let bvol = layout.explain(subject, "bvol");
    write_atomic(&bvol, &att.volume.to_bytes())?;
    write_atomic(&layout.explain(subject, "json"), &serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(sidecar)
}
