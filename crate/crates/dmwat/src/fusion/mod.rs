//! Intermediate fusion and the two referral heads.

mod mlp;
mod svm;

pub use mlp::{mlp_train, MlpHead, MlpTrainConfig};
pub use svm::{svm_objective, svm_subgradient, svm_train, SvmModel, SvmTrainConfig, SvmTrainStats};

use crate::data::ReferralDecision;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Concatenated modality embeddings, image block first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusedRepresentation {
    pub vector: Vec<f64>,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Case this vector was derived from, for traceability.
    pub source_id: String,
}

impl FusedRepresentation {
    pub fn width(&self) -> usize {
        self.vector.len()
    }

    /// Recover the two blocks exactly.
    pub fn blocks(&self) -> (&[f64], &[f64]) {
        self.vector.split_at(self.image_dim)
    }
}

/// Exact concatenation of the two modality embeddings, no rescaling. With
/// `normalize_blocks`, each block is L2-normalized first (ablation flag).
pub fn fuse(
    img_emb: &[f64],
    txt_emb: &[f64],
    source_id: &str,
    normalize_blocks: bool,
) -> Result<FusedRepresentation> {
    if img_emb.is_empty() || txt_emb.is_empty() {
        return Err(Error::InvalidArgument(
            "fusion requires both modality embeddings; no imputation".into(),
        ));
    }
    if !img_emb.iter().chain(txt_emb).all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "fuse" });
    }
    let mut vector = Vec::with_capacity(img_emb.len() + txt_emb.len());
    if normalize_blocks {
        vector.extend(l2_normalized(img_emb));
        vector.extend(l2_normalized(txt_emb));
    } else {
        vector.extend_from_slice(img_emb);
        vector.extend_from_slice(txt_emb);
    }
    Ok(FusedRepresentation {
        vector,
        image_dim: img_emb.len(),
        text_dim: txt_emb.len(),
        source_id: source_id.to_string(),
    })
}

fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Common prediction surface of both heads: per-class scores, argmax with
/// exact ties broken toward the more urgent class.
pub trait HeadModel {
    fn scores(&self, x: &[f64]) -> Result<[f64; 3]>;

    fn predict(&self, x: &[f64]) -> Result<(ReferralDecision, [f64; 3])> {
        let scores = self.scores(x)?;
        Ok((argmax_urgent(&scores), scores))
    }
}

/// Argmax over class scores; exact ties go to the higher ordinal.
pub fn argmax_urgent(scores: &[f64; 3]) -> ReferralDecision {
    let mut best = 0usize;
    for c in 1..3 {
        if scores[c] >= scores[best] {
            best = c;
        }
    }
    ReferralDecision::from_index(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_concatenates_image_first() {
        let f = fuse(&[1.0, 2.0], &[3.0, 4.0, 5.0], "case-1", false).unwrap();
        assert_eq!(f.width(), 5);
        assert_eq!(f.vector, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let (img, txt) = f.blocks();
        assert_eq!(img, &[1.0, 2.0]);
        assert_eq!(txt, &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn full_scale_width() {
        let img = vec![0.5; 768];
        let txt = vec![0.25; 768];
        let f = fuse(&img, &txt, "full-width", false).unwrap();
        assert_eq!(f.width(), 1536);
    }

    #[test]
    fn equal_dim_toy_width() {
        let f = fuse(&vec![0.0; 64], &vec![0.0; 64], "toy", false).unwrap();
        assert_eq!(f.width(), 128);
    }

    #[test]
    fn missing_modality_is_an_error() {
        assert!(fuse(&[], &[1.0], "x", false).is_err());
        assert!(fuse(&[1.0], &[], "x", false).is_err());
    }

    #[test]
    fn argmax_tie_breaks_toward_urgency() {
        assert_eq!(
            argmax_urgent(&[0.1, 0.9, 0.2]),
            ReferralDecision::NonUrgentChange
        );
        assert_eq!(
            argmax_urgent(&[0.5, 0.5, 0.1]),
            ReferralDecision::NonUrgentChange
        );
        assert_eq!(argmax_urgent(&[0.0, 0.0, 0.0]), ReferralDecision::UrgentChange);
    }
}
