//! Rule-based clinical finding extraction and micro-averaged F1.
//!
//! The lexicons below are co-designed with the report templates in
//! [`crate::synth::templates`]: extracting from any rendered template yields
//! exactly the labels it was rendered from.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
    Bilateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anatomy {
    Frontal,
    Parietal,
    Temporal,
    Occipital,
    Ventricle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathology {
    Edema,
    Necrosis,
    Enhancement,
    Compression,
}

impl Anatomy {
    pub const ALL: [Anatomy; 5] = [
        Anatomy::Frontal,
        Anatomy::Parietal,
        Anatomy::Temporal,
        Anatomy::Occipital,
        Anatomy::Ventricle,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Anatomy::Frontal => "frontal",
            Anatomy::Parietal => "parietal",
            Anatomy::Temporal => "temporal",
            Anatomy::Occipital => "occipital",
            Anatomy::Ventricle => "ventricle",
        }
    }
}

impl Laterality {
    pub fn word(self) -> &'static str {
        match self {
            Laterality::Left => "left",
            Laterality::Right => "right",
            Laterality::Bilateral => "bilateral",
        }
    }
}

impl Pathology {
    pub const ALL: [Pathology; 4] = [
        Pathology::Edema,
        Pathology::Necrosis,
        Pathology::Enhancement,
        Pathology::Compression,
    ];
}

/// Label sets extracted from (or used to render) a report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalFindings {
    pub laterality: BTreeSet<Laterality>,
    pub anatomy: BTreeSet<Anatomy>,
    pub pathology: BTreeSet<Pathology>,
}

impl ClinicalFindings {
    pub fn is_empty(&self) -> bool {
        self.laterality.is_empty() && self.anatomy.is_empty() && self.pathology.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Laterality,
    Anatomy,
    Pathology,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Laterality, Category::Anatomy, Category::Pathology];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Laterality => "laterality",
            Category::Anatomy => "anatomy",
            Category::Pathology => "pathology",
        })
    }
}

enum Label {
    Side(Laterality),
    Site(Anatomy),
    Finding(Pathology),
}

const LEXICON: &[(&[&str], Label)] = &[
    (&["left"], Label::Side(Laterality::Left)),
    (&["right"], Label::Side(Laterality::Right)),
    (&["bilateral"], Label::Side(Laterality::Bilateral)),
    (&["both", "hemispheres"], Label::Side(Laterality::Bilateral)),
    (&["frontal"], Label::Site(Anatomy::Frontal)),
    (&["parietal"], Label::Site(Anatomy::Parietal)),
    (&["temporal"], Label::Site(Anatomy::Temporal)),
    (&["occipital"], Label::Site(Anatomy::Occipital)),
    (&["ventricle"], Label::Site(Anatomy::Ventricle)),
    (&["ventricles"], Label::Site(Anatomy::Ventricle)),
    (&["ventricular"], Label::Site(Anatomy::Ventricle)),
    (&["edema"], Label::Finding(Pathology::Edema)),
    (&["oedema"], Label::Finding(Pathology::Edema)),
    (&["edematous"], Label::Finding(Pathology::Edema)),
    (&["necrosis"], Label::Finding(Pathology::Necrosis)),
    (&["necrotic"], Label::Finding(Pathology::Necrosis)),
    (&["enhancing"], Label::Finding(Pathology::Enhancement)),
    (&["enhancement"], Label::Finding(Pathology::Enhancement)),
    (&["compression"], Label::Finding(Pathology::Compression)),
    (&["compressed"], Label::Finding(Pathology::Compression)),
    (&["mass", "effect"], Label::Finding(Pathology::Compression)),
];

/// Number of preceding tokens searched for a negator.
pub const NEGATION_WINDOW: usize = 3;

fn negated(tokens: &[String], at: usize) -> bool {
    let mut start = at.saturating_sub(NEGATION_WINDOW);
    // Negation does not carry across sentence or clause punctuation.
    if let Some(p) = tokens[start..at].iter().rposition(|t| matches!(t.as_str(), "." | "," | ";" | ":")) {
        start += p + 1;
    }
    let window = &tokens[start..at];
    window.iter().enumerate().any(|(i, t)| {
        t == "no"
            || t == "without"
            || (t == "absence" && window.get(i + 1).is_some_and(|n| n == "of"))
    })
}

/// Keyword extraction with a 3-token negation window bounded by punctuation.
pub fn extract_findings(report: &str) -> ClinicalFindings {
    let tokens = words(report);
    let mut out = ClinicalFindings::default();
    for i in 0..tokens.len() {
        for (term, label) in LEXICON {
            let end = i + term.len();
            if end > tokens.len() || tokens[i..end].iter().zip(term.iter()).any(|(a, b)| a != b) {
                continue;
            }
            if negated(&tokens, i) {
                continue;
            }
            match label {
                Label::Side(l) => {
                    out.laterality.insert(*l);
                }
                Label::Site(a) => {
                    out.anatomy.insert(*a);
                }
                Label::Finding(p) => {
                    out.pathology.insert(*p);
                }
            }
        }
    }
    out
}

/// True/false positive and false negative counts for one category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }

    /// Micro F1; a category with no labels anywhere scores 1.
    pub fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn set_counts<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> Counts {
    let tp = pred.intersection(gold).count();
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

pub fn category_counts(pred: &ClinicalFindings, gold: &ClinicalFindings, category: Category) -> Counts {
    match category {
        Category::Laterality => set_counts(&pred.laterality, &gold.laterality),
        Category::Anatomy => set_counts(&pred.anatomy, &gold.anatomy),
        Category::Pathology => set_counts(&pred.pathology, &gold.pathology),
    }
}

/// Micro-averaged F1 over label occurrences, aggregated across samples.
pub fn clinical_f1(pred: &[ClinicalFindings], gold: &[ClinicalFindings], category: Category) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Domain(format!(
            "{} predictions for {} gold reports",
            pred.len(),
            gold.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(gold)
        .map(|(p, g)| category_counts(p, g, category))
        .fold(Counts::default(), Counts::add)
        .f1())
}
