//! Report metrics: NLG overlap scores, clinical efficacy F1 and bootstrap CIs.

pub mod clinical;
pub mod nlg;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use clinical::{
    category_counts, clinical_f1, extract_findings, Anatomy, Category, ClinicalFindings, Counts,
    Laterality, Pathology,
};
pub use nlg::{bleu_n, cider, rouge_l, rouge_n};

use crate::error::{Error, Result};

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Metric name to summary, e.g. `bleu1`, `clinical_laterality_f1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.get(name)
    }
}

/// Percentile bootstrap of an arbitrary statistic over resampled index sets.
/// Returns the 2.5th and 97.5th percentiles of `n_boot` replicates.
pub fn bootstrap_with(
    n: usize,
    n_boot: usize,
    seed: u64,
    mut statistic: impl FnMut(&[usize]) -> f64,
) -> Result<(f64, f64)> {
    if n == 0 || n_boot == 0 {
        return Err(Error::Domain("bootstrap needs samples and replicates".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let mut reps: Vec<f64> = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        reps.push(statistic(&idx));
    }
    reps.sort_by(f64::total_cmp);
    let pct = |q: f64| {
        let pos = q / 100.0 * (reps.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        reps[lo] + (reps[hi] - reps[lo]) * (pos - lo as f64)
    };
    Ok((pct(2.5), pct(97.5)))
}

/// Percentile bootstrap CI of the mean.
pub fn bootstrap_ci(scores: &[f64], n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    bootstrap_with(scores.len(), n_boot, seed, |idx| {
        idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64
    })
}

fn summary(mean: f64, (low, high): (f64, f64)) -> MetricSummary {
    // Percentile intervals of skewed statistics can miss the point estimate.
    MetricSummary {
        mean,
        low: low.min(mean),
        high: high.max(mean),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scores predictions against gold reports. `healthy` flags gold reports
/// from healthy subjects; when any are present `healthy_specificity` (share
/// of healthy subjects with no predicted pathology) is reported.
pub fn evaluate_reports(
    predictions: &[String],
    gold: &[String],
    healthy: &[bool],
    n_boot: usize,
    seed: u64,
) -> Result<MetricReport> {
    if predictions.len() != gold.len() || healthy.len() != gold.len() {
        return Err(Error::Domain("predictions, gold and class flags differ in length".into()));
    }
    if gold.is_empty() {
        return Err(Error::Domain("nothing to evaluate".into()));
    }
    let mut report = MetricReport {
        n_samples: gold.len(),
        ..Default::default()
    };
    let pairs: Vec<(&str, &str)> = predictions
        .iter()
        .zip(gold)
        .map(|(p, g)| (p.as_str(), g.as_str()))
        .collect();

    let mut per_sample: Vec<(&str, Vec<f64>)> = vec![
        ("bleu1", pairs.iter().map(|(p, g)| bleu_n(p, &[g], 1)).collect()),
        ("bleu4", pairs.iter().map(|(p, g)| bleu_n(p, &[g], 4)).collect()),
        ("rouge1", pairs.iter().map(|(p, g)| rouge_n(p, g, 1)).collect()),
        ("rouge2", pairs.iter().map(|(p, g)| rouge_n(p, g, 2)).collect()),
        ("rougeL", pairs.iter().map(|(p, g)| rouge_l(p, g)).collect()),
    ];
    let hyps: Vec<&str> = pairs.iter().map(|p| p.0).collect();
    let refs: Vec<&str> = pairs.iter().map(|p| p.1).collect();
    per_sample.push(("cider", cider(&hyps, &refs)));
    for (k, (name, scores)) in per_sample.iter().enumerate() {
        let ci = bootstrap_ci(scores, n_boot, seed.wrapping_add(k as u64))?;
        report
            .metrics
            .insert((*name).to_string(), summary(mean(scores), ci));
    }

    let pred_f: Vec<ClinicalFindings> = predictions.iter().map(|p| extract_findings(p)).collect();
    let gold_f: Vec<ClinicalFindings> = gold.iter().map(|g| extract_findings(g)).collect();
    for (k, cat) in Category::ALL.into_iter().enumerate() {
        let counts: Vec<Counts> = pred_f
            .iter()
            .zip(&gold_f)
            .map(|(p, g)| category_counts(p, g, cat))
            .collect();
        let point = counts.iter().copied().fold(Counts::default(), Counts::add).f1();
        let ci = bootstrap_with(counts.len(), n_boot, seed.wrapping_add(100 + k as u64), |idx| {
            idx.iter()
                .map(|&i| counts[i])
                .fold(Counts::default(), Counts::add)
                .f1()
        })?;
        report
            .metrics
            .insert(format!("clinical_{cat}_f1"), summary(point, ci));
    }

    let healthy_hits: Vec<f64> = pred_f
        .iter()
        .zip(healthy)
        .filter(|(_, &h)| h)
        .map(|(p, _)| if p.pathology.is_empty() { 1.0 } else { 0.0 })
        .collect();
    if !healthy_hits.is_empty() {
        let ci = bootstrap_ci(&healthy_hits, n_boot, seed.wrapping_add(200))?;
        report
            .metrics
            .insert("healthy_specificity".into(), summary(mean(&healthy_hits), ci));
    }
    Ok(report)
}
