//! Dataset schema, label reconciliation, folding, balancing, and the
//! synthetic-case generator.

mod balance;
mod folds;
mod generator;
mod textaug;

pub use balance::{balance_upsample, equalized_targets, BalanceAugmentor, ImageCaseAugmentor};
pub use folds::{stratified_kfold, FoldAssignment};
pub use generator::{
    default_note_templates, generate_synthetic_dataset, image_severity_feature, load_gen_meta,
    GeneratedCaseInfo, GeneratorSpec, ImageGenParams, LesionEllipse, BENIGN_KEYWORDS,
    SEVERE_KEYWORDS,
};
pub use textaug::{augment_text, TextAugmentClient, ENV_LLM_TOKEN, ENV_LLM_URL};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Ordinal referral decision. Higher is more urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ReferralDecision {
    Continue = 1,
    NonUrgentChange = 2,
    UrgentChange = 3,
}

pub const ALL_DECISIONS: [ReferralDecision; 3] = [
    ReferralDecision::Continue,
    ReferralDecision::NonUrgentChange,
    ReferralDecision::UrgentChange,
];

impl ReferralDecision {
    pub fn from_ordinal(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ReferralDecision::Continue),
            2 => Ok(ReferralDecision::NonUrgentChange),
            3 => Ok(ReferralDecision::UrgentChange),
            other => Err(Error::InvalidData(format!(
                "referral decision must be 1, 2 or 3, got {other}"
            ))),
        }
    }

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    /// Zero-based class index used for one-hot vectors and confusion counts.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        ALL_DECISIONS[i]
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for ReferralDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ReferralDecision::Continue => "continue treatment",
            ReferralDecision::NonUrgentChange => "non-urgent change",
            ReferralDecision::UrgentChange => "urgent change",
        };
        write!(f, "{} ({})", self.ordinal(), name)
    }
}

impl Serialize for ReferralDecision {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.ordinal())
    }
}

impl<'de> Deserialize<'de> for ReferralDecision {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        ReferralDecision::from_ordinal(v).map_err(serde::de::Error::custom)
    }
}

/// Conservative reconciliation of two expert decisions: the more urgent wins.
pub fn reconcile_labels(d1: ReferralDecision, d2: ReferralDecision) -> ReferralDecision {
    d1.max(d2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    ImageAug,
    TextAug,
    Generator,
}

/// One sample: image, clinical note, both expert decisions, reconciled label.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WoundCase {
    pub case_id: String,
    pub image_path: String,
    pub note: String,
    pub dec_exp1: ReferralDecision,
    pub dec_exp2: ReferralDecision,
    pub dec_final: ReferralDecision,
    pub is_synthetic_augment: bool,
    pub provenance: Provenance,
    #[serde(default)]
    pub parent_case_id: Option<String>,
}

impl WoundCase {
    /// Schema invariants: reconciled label and augment parentage.
    pub fn validate(&self) -> Result<()> {
        if self.dec_final != reconcile_labels(self.dec_exp1, self.dec_exp2) {
            return Err(Error::InvalidData(format!(
                "case {}: dec_final {} is not max(exp1 {}, exp2 {})",
                self.case_id,
                self.dec_final.ordinal(),
                self.dec_exp1.ordinal(),
                self.dec_exp2.ordinal()
            )));
        }
        if self.is_synthetic_augment && self.parent_case_id.is_none() {
            return Err(Error::InvalidData(format!(
                "augmented case {} has no parent_case_id",
                self.case_id
            )));
        }
        Ok(())
    }

    /// Id of the original this case descends from (itself when original).
    pub fn root_id(&self) -> &str {
        self.parent_case_id.as_deref().unwrap_or(&self.case_id)
    }
}

/// Write cases as JSON-Lines, one case per line, in input order.
pub fn save_dataset(path: &Path, cases: &[WoundCase]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for case in cases {
        let mut line = serde_json::to_string(case)?;
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Load and validate a JSON-Lines dataset.
pub fn load_dataset(path: &Path) -> Result<Vec<WoundCase>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cases = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let case: WoundCase = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        case.validate()?;
        cases.push(case);
    }
    if cases.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: dataset is empty",
            path.display()
        )));
    }
    Ok(cases)
}

/// Per-class case counts indexed by [`ReferralDecision::index`].
pub fn class_histogram(cases: &[WoundCase]) -> [usize; 3] {
    let mut h = [0; 3];
    for c in cases {
        h[c.dec_final.index()] += 1;
    }
    h
}
