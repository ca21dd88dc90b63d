//! Distillation loss: convex combination of a cross-entropy term against the
//! true label and a knowledge-distillation term against the teacher.

use super::{softmax3, VitConfig};
use crate::data::ReferralDecision;
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::tensor::{Tape, Tensor, Var};
use crate::vision::augment::SoftLabel;
use serde::{Deserialize, Serialize};

/// Frozen classifier a student distills from.
pub trait Teacher {
    fn logits(&self, img: &ImageSample) -> Result<[f64; 3]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillationMode {
    /// Cross-entropy against the teacher's argmax.
    Hard,
    /// KL divergence between temperature-scaled softmaxes.
    Soft,
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kd: f64,
    pub total: f64,
}

/// Tape-level distillation loss:
/// `total = alpha * ce + (1 - alpha) * kd`, with `ce` against the (possibly
/// soft) true label and `kd` against the teacher per the configured mode.
pub fn distillation_loss_vars(
    tape: &mut Tape,
    student_logits: Var,
    teacher_logits: [f64; 3],
    label: SoftLabel,
    cfg: &VitConfig,
) -> Result<(Var, LossBreakdown)> {
    let alpha = cfg.distillation_alpha;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "distillation alpha must lie in [0,1], got {alpha}"
        )));
    }
    let target = Tensor::row(&label);
    let ce = tape.cross_entropy(student_logits, &target)?;

    let kd = match cfg.distillation_mode {
        DistillationMode::Hard => {
            let probs = softmax3(teacher_logits);
            let argmax = (0..3)
                .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
                .unwrap();
            let mut hard = [0.0; 3];
            hard[argmax] = 1.0;
            tape.cross_entropy(student_logits, &Tensor::row(&hard))?
        }
        DistillationMode::Soft => {
            let t = cfg.soft_temperature;
            let teacher_soft = softmax3([
                teacher_logits[0] / t,
                teacher_logits[1] / t,
                teacher_logits[2] / t,
            ]);
            let student_scaled = tape.scale(student_logits, 1.0 / t)?;
            tape.kl_divergence(&Tensor::row(&teacher_soft), student_scaled)?
        }
    };

    let ce_term = tape.scale(ce, alpha)?;
    let kd_term = tape.scale(kd, 1.0 - alpha)?;
    let total = tape.add(ce_term, kd_term)?;
    let breakdown = LossBreakdown {
        ce: tape.value(ce).item(),
        kd: tape.value(kd).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

/// Value-level distillation loss for given logits.
pub fn distillation_loss(
    student_logits: [f64; 3],
    teacher_logits: [f64; 3],
    label: ReferralDecision,
    cfg: &VitConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::row(&student_logits));
    let (_, breakdown) =
        distillation_loss_vars(&mut tape, z, teacher_logits, label.one_hot(), cfg)?;
    Ok(breakdown)
}
