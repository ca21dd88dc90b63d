//! Masked-language-model pretraining with the enhanced mask decoder.

use super::tokenizer::{ClinicalNote, CLS_ID, MASK_ID, PAD_ID};
use super::TextEncoder;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{Optimizer, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    /// Replace with the MASK token (80% of selections).
    Mask,
    /// Replace with a random regular token (10%).
    Random(usize),
    /// Keep the original token but still predict it (10%).
    Keep,
}

#[derive(Debug, Clone, Copy)]
pub struct MaskPlan {
    pub pos: usize,
    pub original: usize,
    pub action: MaskAction,
}

pub const MASK_RATE: f64 = 0.15;

/// Select ~15% of non-special positions with the standard 80/10/10 split.
/// Errors when there is nothing to predict (no maskable tokens, or rate 0).
pub fn sample_mask_plan(
    note: &ClinicalNote,
    vocab_size: usize,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<Vec<MaskPlan>> {
    let maskable: Vec<usize> = note
        .token_ids
        .iter()
        .enumerate()
        .filter(|&(pos, &id)| pos != 0 && id != PAD_ID && id != CLS_ID)
        .map(|(pos, _)| pos)
        .collect();
    let n = (rate * maskable.len() as f64).round() as usize;
    let n = if rate > 0.0 && !maskable.is_empty() {
        n.max(1)
    } else {
        n
    };
    if n == 0 {
        return Err(Error::InvalidArgument(
            "mlm: nothing to predict (no maskable tokens selected)".into(),
        ));
    }
    let mut order = maskable;
    order.shuffle(rng);
    let first_regular = 4; // ids below this are reserved specials
    Ok(order[..n]
        .iter()
        .map(|&pos| {
            let roll: f64 = rng.random_range(0.0..1.0);
            let action = if roll < 0.8 {
                MaskAction::Mask
            } else if roll < 0.9 {
                MaskAction::Random(rng.random_range(first_regular..vocab_size))
            } else {
                MaskAction::Keep
            };
            MaskPlan {
                pos,
                original: note.token_ids[pos],
                action,
            }
        })
        .collect())
}

/// Cross-entropy over the masked positions of one corrupted note.
pub fn masked_note_loss(
    enc: &TextEncoder,
    tape: &mut Tape,
    binding: &crate::tensor::Binding,
    note: &ClinicalNote,
    plan: &[MaskPlan],
) -> Result<Var> {
    if plan.is_empty() {
        return Err(Error::InvalidArgument("mlm: empty mask plan".into()));
    }
    let mut corrupted = note.clone();
    for m in plan {
        corrupted.token_ids[m.pos] = match m.action {
            MaskAction::Mask => MASK_ID,
            MaskAction::Random(id) => id,
            MaskAction::Keep => m.original,
        };
    }
    let states = enc.forward_vars(tape, binding, &corrupted)?;
    let positions: Vec<usize> = plan.iter().map(|m| m.pos).collect();
    let logits = enc.mlm_logits_at(tape, binding, states, &positions)?;

    let mut target = vec![0.0; plan.len() * enc.vocab_size];
    for (row, m) in plan.iter().enumerate() {
        target[row * enc.vocab_size + m.original] = 1.0;
    }
    tape.cross_entropy(logits, &Tensor::new(&[plan.len(), enc.vocab_size], target)?)
}

#[derive(Debug, Clone)]
pub struct MlmStats {
    pub epoch_losses: Vec<f64>,
}

/// Pretrain the encoder in place over the note corpus.
pub fn mlm_pretrain(
    enc: &mut TextEncoder,
    notes: &[ClinicalNote],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<MlmStats> {
    if notes.is_empty() {
        return Err(Error::InvalidArgument("mlm: empty corpus".into()));
    }
    let mut opt = Optimizer::adaptive(learning_rate);
    let mut order: Vec<usize> = (0..notes.len()).collect();
    let mut order_rng = substream(seed, "mlm-order");
    let mut mask_rng = substream(seed, "mlm-mask");
    let mut stats = MlmStats {
        epoch_losses: Vec::with_capacity(epochs),
    };

    for _ in 0..epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut counted = 0usize;
        for &i in &order {
            let note = &notes[i];
            let plan = match sample_mask_plan(note, enc.vocab_size, MASK_RATE, &mut mask_rng) {
                Ok(plan) => plan,
                // content-empty notes have nothing to predict; skip them
                Err(_) => continue,
            };
            let mut tape = Tape::new();
            let binding = enc.params.bind(&mut tape);
            let loss = masked_note_loss(enc, &mut tape, &binding, note, &plan)?;
            total += tape.value(loss).item();
            counted += 1;
            tape.backward(loss)?;
            binding.harvest(&tape, &mut enc.params);
            opt.step(&mut enc.params)?;
        }
        if counted == 0 {
            return Err(Error::InvalidArgument(
                "mlm: corpus has no maskable content".into(),
            ));
        }
        stats.epoch_losses.push(total / counted as f64);
    }
    Ok(stats)
}
