//! Text classifier: the encoder with a 3-way head, trained by optional MLM
//! pretraining followed by supervised fine-tuning on the CLS state.

use super::mlm::mlm_pretrain;
use super::tokenizer::ClinicalNote;
use super::{TextEncoder, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{Binding, Optimizer, OptimizerKind, ParamId, ParamSet, Tape, Tensor, Var};
use crate::vision::augment::SoftLabel;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub struct TextClassifier {
    pub encoder: TextEncoder,
    pub head: ParamSet,
    head_w: ParamId,
    head_b: ParamId,
}

impl TextClassifier {
    pub fn new(encoder: TextEncoder, rng: &mut impl rand::Rng) -> Self {
        let d = encoder.cfg.embed_dim;
        let mut head = ParamSet::new();
        let head_w = head.add("head.w", crate::vision::init(&[d, 3], rng));
        let head_b = head.add("head.b", Tensor::zeros(&[1, 3]));
        TextClassifier {
            encoder,
            head,
            head_w,
            head_b,
        }
    }

    pub fn logits_vars(
        &self,
        tape: &mut Tape,
        enc_b: &Binding,
        head_b: &Binding,
        note: &ClinicalNote,
    ) -> Result<Var> {
        let states = self.encoder.forward_vars(tape, enc_b, note)?;
        let cls = tape.slice_rows(states, 0, 1)?;
        let z = tape.matmul(cls, head_b.var(self.head_w))?;
        tape.add(z, head_b.var(self.head_b))
    }

    pub fn logits(&self, note: &ClinicalNote) -> Result<[f64; 3]> {
        let mut tape = Tape::new();
        let enc_b = self.encoder.params.bind_frozen(&mut tape);
        let head_b = self.head.bind_frozen(&mut tape);
        let z = self.logits_vars(&mut tape, &enc_b, &head_b, note)?;
        let d = tape.value(z).data();
        Ok([d[0], d[1], d[2]])
    }

    pub fn predict_probs(&self, note: &ClinicalNote) -> Result<[f64; 3]> {
        Ok(crate::vision::softmax3(self.logits(note)?))
    }

    /// Target-class logit as a scalar on the tape, with the input supplied as
    /// an embedding matrix. Parameters are frozen; the gradient belongs to
    /// the embeddings. This is the function Integrated Gradients integrates.
    pub fn target_logit_from_embeddings(
        &self,
        tape: &mut Tape,
        embeddings: Var,
        valid: &[bool],
        target_class: usize,
    ) -> Result<Var> {
        if target_class >= 3 {
            return Err(Error::InvalidArgument(format!(
                "target class index {target_class} out of range"
            )));
        }
        let enc_b = self.encoder.params.bind_frozen(tape);
        let head_b = self.head.bind_frozen(tape);
        let states = self
            .encoder
            .forward_from_embeddings(tape, &enc_b, embeddings, valid)?;
        let cls = tape.slice_rows(states, 0, 1)?;
        let z = tape.matmul(cls, head_b.var(self.head_w))?;
        let z = tape.add(z, head_b.var(self.head_b))?;
        tape.slice_cols(z, target_class, target_class + 1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextTrainConfig {
    /// MLM pretraining epochs before fine-tuning; 0 disables the stage.
    pub mlm_epochs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
}

fn default_optimizer() -> String {
    "adaptive".into()
}

impl Default for TextTrainConfig {
    fn default() -> Self {
        TextTrainConfig {
            mlm_epochs: 2,
            epochs: 5,
            learning_rate: 1e-3,
            optimizer: default_optimizer(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextTrainStats {
    pub mlm_epoch_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

pub fn train_text_classifier(
    samples: &[(&ClinicalNote, SoftLabel)],
    vocab_size: usize,
    text_cfg: TextEncoderConfig,
    cfg: &TextTrainConfig,
    seed: u64,
) -> Result<(TextClassifier, TextTrainStats)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("text: empty training set".into()));
    }
    let mut init_rng = substream(seed, "text-init");
    let mut encoder = TextEncoder::new(text_cfg, vocab_size, &mut init_rng)?;

    let mut stats = TextTrainStats {
        mlm_epoch_losses: Vec::new(),
        epoch_losses: Vec::new(),
    };
    if cfg.mlm_epochs > 0 {
        let corpus: Vec<ClinicalNote> = samples.iter().map(|(n, _)| (*n).clone()).collect();
        let mlm_stats = mlm_pretrain(&mut encoder, &corpus, cfg.mlm_epochs, cfg.learning_rate, seed)?;
        stats.mlm_epoch_losses = mlm_stats.epoch_losses;
    }

    let mut model = TextClassifier::new(encoder, &mut init_rng);
    let kind = OptimizerKind::parse(&cfg.optimizer)?;
    let mut opt_enc = Optimizer::new(kind, cfg.learning_rate);
    let mut opt_head = Optimizer::new(kind, cfg.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = substream(seed, "text-order");

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let (note, label) = samples[i];
            let mut tape = Tape::new();
            let enc_b = model.encoder.params.bind(&mut tape);
            let head_b = model.head.bind(&mut tape);
            let z = model.logits_vars(&mut tape, &enc_b, &head_b, note)?;
            let loss = tape.cross_entropy(z, &Tensor::row(&label))?;
            epoch_loss += tape.value(loss).item();
            tape.backward(loss)?;
            enc_b.harvest(&tape, &mut model.encoder.params);
            head_b.harvest(&tape, &mut model.head);
            opt_enc.step(&mut model.encoder.params)?;
            opt_head.step(&mut model.head)?;
        }
        stats.epoch_losses.push(epoch_loss / samples.len() as f64);
    }
    Ok((model, stats))
}
