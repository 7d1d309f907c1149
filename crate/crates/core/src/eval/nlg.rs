//! BLEU, ROUGE and CIDEr over word tokens (see [`crate::text::words`]).

use std::collections::BTreeMap;

use crate::text::words;

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Ngram<'_>, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-n without smoothing: geometric mean of clipped i-gram
/// precisions (i = 1..=n) times the brevity penalty. Any zero precision gives 0.
pub fn bleu_n(hypothesis: &str, references: &[&str], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be in 1..=4");
    let hyp = words(hypothesis);
    if hyp.is_empty() || references.is_empty() {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| words(r)).collect();
    let mut log_sum = 0.0;
    for order in 1..=n {
        let hyp_counts = ngram_counts(&hyp, order);
        let total: usize = hyp_counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, order)).collect();
        let clipped: usize = hyp_counts
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(g).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = hyp.len();
    // Closest reference length, shorter one on ties.
    let r = refs
        .iter()
        .map(|t| t.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(c);
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / n as f64).exp()
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// ROUGE-N F1 with count clipping.
pub fn rouge_n(hypothesis: &str, reference: &str, n: usize) -> f64 {
    let hyp = words(hypothesis);
    let refr = words(reference);
    let h = ngram_counts(&hyp, n);
    let r = ngram_counts(&refr, n);
    let h_total: usize = h.values().sum();
    let r_total: usize = r.values().sum();
    match (h_total, r_total) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let overlap: usize = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    f1(overlap as f64 / h_total as f64, overlap as f64 / r_total as f64)
}

pub(crate) fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over the longest common subsequence.
pub fn rouge_l(hypothesis: &str, reference: &str) -> f64 {
    let hyp = words(hypothesis);
    let refr = words(reference);
    match (hyp.len(), refr.len()) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let l = lcs_len(&hyp, &refr) as f64;
    f1(l / hyp.len() as f64, l / refr.len() as f64)
}

/// CIDEr with one reference per hypothesis.
///
/// For each order n in 1..=4 both sentences become tf-idf vectors with
/// `idf(g) = ln(N) - ln(max(1, df(g)))`, df counted over the reference corpus
/// of size N. The per-sample score is 10 times the mean cosine over orders.
/// Returns the per-sample scores.
pub fn cider(hypotheses: &[&str], references: &[&str]) -> Vec<f64> {
    assert_eq!(
        hypotheses.len(),
        references.len(),
        "one reference per hypothesis"
    );
    let n_docs = references.len();
    if n_docs == 0 {
        return Vec::new();
    }
    let hyp_tokens: Vec<Vec<String>> = hypotheses.iter().map(|h| words(h)).collect();
    let ref_tokens: Vec<Vec<String>> = references.iter().map(|r| words(r)).collect();
    let log_n = (n_docs as f64).ln();
    let mut scores = vec![0.0; n_docs];
    for n in 1..=4 {
        let ref_counts: Vec<_> = ref_tokens.iter().map(|t| ngram_counts(t, n)).collect();
        let mut df: BTreeMap<Ngram<'_>, usize> = BTreeMap::new();
        for rc in &ref_counts {
            for g in rc.keys() {
                *df.entry(*g).or_insert(0) += 1;
            }
        }
        let idf = |g: &Ngram<'_>| log_n - (df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        for (i, score) in scores.iter_mut().enumerate() {
            let hc = ngram_counts(&hyp_tokens[i], n);
            let rc = &ref_counts[i];
            let vec_h: BTreeMap<_, f64> = hc.iter().map(|(g, &c)| (*g, c as f64 * idf(g))).collect();
            let vec_r: BTreeMap<_, f64> = rc.iter().map(|(g, &c)| (*g, c as f64 * idf(g))).collect();
            let norm_h = vec_h.values().map(|v| v * v).sum::<f64>().sqrt();
            let norm_r = vec_r.values().map(|v| v * v).sum::<f64>().sqrt();
            if norm_h == 0.0 || norm_r == 0.0 {
                continue;
            }
            let dot: f64 = vec_h
                .iter()
                .filter_map(|(g, v)| vec_r.get(g).map(|w| v * w))
                .sum();
            *score += dot / (norm_h * norm_r);
        }
    }
    scores.iter().map(|s| s / 4.0 * 10.0).collect()
}
