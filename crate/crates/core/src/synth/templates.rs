//! Sentence templates for synthetic reports.
//!
//! Every rendering is exactly invertible by [`crate::eval::extract_findings`]
//! and contains no repeated word trigram, so trigram-blocked decoding can
//! reproduce any reference verbatim.

use crate::eval::{Anatomy, ClinicalFindings, Laterality, Pathology};

/// Side of a pathological lesion, including the cohort's "undefined" bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bilateral,
    Undefined,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bilateral, Side::Undefined];

    pub fn laterality(self) -> Option<Laterality> {
        match self {
            Side::Left => Some(Laterality::Left),
            Side::Right => Some(Laterality::Right),
            Side::Bilateral => Some(Laterality::Bilateral),
            Side::Undefined => None,
        }
    }
}

pub const HEALTHY_VARIANTS: [&str; 2] = [
    "No abnormality detected. Normal brain MRI.",
    "No abnormality detected. Normal brain MRI without mass effect.",
];

/// Number of alternative phrasings per sentence slot.
pub const VARIANTS: usize = 2;

fn location(side: Side, anatomy: Anatomy, variant: usize) -> String {
    let a = anatomy.word();
    let ventricle = anatomy == Anatomy::Ventricle;
    match (side, ventricle, variant % VARIANTS) {
        (Side::Left | Side::Right, false, 0) => {
            let s = side.laterality().unwrap().word();
            format!("The lesion area is in the {a} lobe of the {s} hemisphere.")
        }
        (Side::Left | Side::Right, false, _) => {
            let s = side.laterality().unwrap().word();
            format!("A lesion is seen in the {s} {a} lobe.")
        }
        (Side::Left | Side::Right, true, 0) => {
            let s = side.laterality().unwrap().word();
            format!("The lesion area is adjacent to the {s} lateral ventricle.")
        }
        (Side::Left | Side::Right, true, _) => {
            let s = side.laterality().unwrap().word();
            format!("A lesion is seen near the {s} ventricle.")
        }
        (Side::Bilateral, false, 0) => {
            format!("The lesion area is bilateral and involves the {a} lobes of both hemispheres.")
        }
        (Side::Bilateral, false, _) => format!("A bilateral lesion is seen in the {a} lobes."),
        (Side::Bilateral, true, 0) => {
            "The lesion area is bilateral and surrounds the ventricles of both hemispheres.".into()
        }
        (Side::Bilateral, true, _) => "A bilateral lesion is seen near the ventricles.".into(),
        (Side::Undefined, _, 0) => format!("The lesion area is in the {a} region near the midline."),
        (Side::Undefined, _, _) => format!("A midline lesion is seen in the {a} region."),
    }
}

fn pathology_sentence(p: Pathology, variant: usize) -> &'static str {
    match (p, variant % VARIANTS) {
        (Pathology::Edema, 0) => "Edema is mainly observed in the peripheral regions of the lesion.",
        (Pathology::Edema, _) => "Surrounding edema indicates swelling of adjacent tissue.",
        (Pathology::Necrosis, 0) => "Necrosis is observed with low signal intensity in the core.",
        (Pathology::Necrosis, _) => "A necrotic core shows low signal intensity.",
        (Pathology::Enhancement, 0) => "Enhancing components are seen at the lesion margin.",
        (Pathology::Enhancement, _) => "Mixed signal with enhancement is noted at the margin.",
        (Pathology::Compression, 0) => "Mass effect causes compression of adjacent structures.",
        (Pathology::Compression, _) => "Compression of adjacent structures suggests mass effect.",
    }
}

/// Phrasing choices for one report: index 0 picks the location sentence,
/// indices 1..=4 the pathology sentences in [`Pathology::ALL`] order.
pub type Phrasing = [usize; 5];

/// Renders a pathological report.
pub fn render_pathological(side: Side, anatomy: Anatomy, pathology: &[Pathology], phrasing: Phrasing) -> String {
    let mut parts = vec![location(side, anatomy, phrasing[0])];
    for (k, p) in Pathology::ALL.iter().enumerate() {
        if pathology.contains(p) {
            parts.push(pathology_sentence(*p, phrasing[k + 1]).to_string());
        }
    }
    parts.join(" ")
}

pub fn render_healthy(variant: usize) -> String {
    HEALTHY_VARIANTS[variant % HEALTHY_VARIANTS.len()].to_string()
}

/// Ground-truth findings for a rendered report.
pub fn findings_for(side: Side, anatomy: Anatomy, pathology: &[Pathology]) -> ClinicalFindings {
    ClinicalFindings {
        laterality: side.laterality().into_iter().collect(),
        anatomy: [anatomy].into_iter().collect(),
        pathology: pathology.iter().copied().collect(),
    }
}

/// Every report the bank can produce, paired with its findings.
pub fn all_renderings() -> Vec<(String, ClinicalFindings)> {
    let mut out: Vec<(String, ClinicalFindings)> = (0..HEALTHY_VARIANTS.len())
        .map(|v| (render_healthy(v), ClinicalFindings::default()))
        .collect();
    for side in Side::ALL {
        for anatomy in Anatomy::ALL {
            for mask in 1u32..16 {
                let path: Vec<Pathology> = Pathology::ALL
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, p)| *p)
                    .collect();
                for code in 0..(VARIANTS.pow(5)) {
                    let mut phrasing = [0usize; 5];
                    let mut c = code;
                    for slot in phrasing.iter_mut() {
                        *slot = c % VARIANTS;
                        c /= VARIANTS;
                    }
                    // Skip phrasings that only differ in unused slots.
                    let redundant = Pathology::ALL
                        .iter()
                        .enumerate()
                        .any(|(k, p)| !path.contains(p) && phrasing[k + 1] != 0);
                    if redundant {
                        continue;
                    }
                    out.push((
                        render_pathological(side, anatomy, &path, phrasing),
                        findings_for(side, anatomy, &path),
                    ));
                }
            }
        }
    }
    out
}
