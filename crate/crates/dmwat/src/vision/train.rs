//! Distillation training loop for the vision classifier.

use super::augment::{cutmix, mixup, SoftLabel};
use super::distill::{distillation_loss_vars, Teacher};
use super::{VisionClassifier, VisionEncoder, VitConfig};
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::rng::substream;
use crate::tensor::{Optimizer, OptimizerKind};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisionTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    /// Probability that a step trains on a Mixup (resp. CutMix) hybrid.
    pub mixup_prob: f64,
    pub cutmix_prob: f64,
}

fn default_optimizer() -> String {
    "adaptive".into()
}

impl Default for VisionTrainConfig {
    fn default() -> Self {
        VisionTrainConfig {
            epochs: 5,
            learning_rate: 1e-3,
            optimizer: default_optimizer(),
            mixup_prob: 0.15,
            cutmix_prob: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VisionTrainStats {
    pub epoch_losses: Vec<f64>,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Train a fresh vision classifier with the distillation objective against a
/// frozen teacher. Labels may be soft (from upstream Mixup/CutMix).
pub fn train_vision_classifier(
    samples: &[(&ImageSample, SoftLabel)],
    teacher: &dyn Teacher,
    vit: VitConfig,
    cfg: &VisionTrainConfig,
    seed: u64,
) -> Result<(VisionClassifier, VisionTrainStats)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("vision: empty training set".into()));
    }
    let hw = (samples[0].0.height(), samples[0].0.width());
    let mut init_rng = substream(seed, "vision-init");
    let encoder = VisionEncoder::new(vit.clone(), hw, &mut init_rng)?;
    let mut model = VisionClassifier::new(encoder, &mut init_rng);

    // dataset mean pixel doubles as the blank interpretability baseline
    let mut mean = [0.0f64; 3];
    for (img, _) in samples {
        let m = img.channel_means();
        for ch in 0..3 {
            mean[ch] += m[ch];
        }
    }
    for ch in 0..3 {
        mean[ch] /= samples.len() as f64;
    }
    model.encoder.pixel_mean = mean;

    let kind = OptimizerKind::parse(&cfg.optimizer)?;
    let mut opt_enc = Optimizer::new(kind, cfg.learning_rate);
    let mut opt_head = Optimizer::new(kind, cfg.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = substream(seed, "vision-order");
    let mut aug_rng = substream(seed, "vision-mix");

    let mut stats = VisionTrainStats {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        first_loss: 0.0,
        last_loss: 0.0,
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let (img, label) = samples[i];
            // optional in-flight Mixup/CutMix regularization with a random partner
            let roll: f64 = aug_rng.random_range(0.0..1.0);
            let (train_img, train_label);
            if roll < cfg.mixup_prob && samples.len() > 1 {
                let j = aug_rng.random_range(0..samples.len());
                let (mixed, lab) =
                    mixup((img, label), (samples[j].0, samples[j].1), None, &mut aug_rng)?;
                train_img = mixed;
                train_label = lab;
            } else if roll < cfg.mixup_prob + cfg.cutmix_prob && samples.len() > 1 {
                let j = aug_rng.random_range(0..samples.len());
                let cut_seed: u64 = aug_rng.random();
                let (mixed, lab, _) =
                    cutmix((img, label), (samples[j].0, samples[j].1), cut_seed)?;
                train_img = mixed;
                train_label = lab;
            } else {
                train_img = img.clone();
                train_label = label;
            }

            let teacher_logits = teacher.logits(&train_img)?;
            let mut tape = crate::tensor::Tape::new();
            let enc_b = model.encoder.params.bind(&mut tape);
            let head_b = model.head.bind(&mut tape);
            let z = model.logits_vars(&mut tape, &enc_b, &head_b, &train_img)?;
            let (loss, breakdown) =
                distillation_loss_vars(&mut tape, z, teacher_logits, train_label, &vit)?;
            tape.backward(loss)?;
            enc_b.harvest(&tape, &mut model.encoder.params);
            head_b.harvest(&tape, &mut model.head);
            opt_enc.step(&mut model.encoder.params)?;
            opt_head.step(&mut model.head)?;
            epoch_loss += breakdown.total;
        }
        epoch_loss /= samples.len() as f64;
        if epoch == 0 {
            stats.first_loss = epoch_loss;
        }
        stats.last_loss = epoch_loss;
        stats.epoch_losses.push(epoch_loss);
    }
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ReferralDecision;

    /// Teacher stub keyed to the brightness signal the test images carry,
    /// standing in for a teacher trained on the same fold.
    struct BrightnessTeacher;
    impl Teacher for BrightnessTeacher {
        fn logits(&self, img: &ImageSample) -> Result<[f64; 3]> {
            let m = img.channel_means();
            let b = (m[0] + m[1] + m[2]) / 3.0;
            Ok([4.0 * (0.5 - b), 1.0 - 8.0 * (b - 0.5).abs(), 4.0 * (b - 0.5)])
        }
    }

    fn class_image(class: ReferralDecision, seed: u64) -> ImageSample {
        let mut rng = substream(seed, "timg");
        let base = match class {
            ReferralDecision::Continue => 0.2,
            ReferralDecision::NonUrgentChange => 0.5,
            ReferralDecision::UrgentChange => 0.8,
        };
        let mut img = ImageSample::filled(32, 32, base);
        for r in 0..32 {
            for c in 0..32 {
                let v: f64 = rng.random_range(-0.05..0.05);
                for ch in 0..3 {
                    img.set(r, c, ch, (base + v).clamp(0.0, 1.0));
                }
            }
        }
        img
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_parameters() {
        let images: Vec<ImageSample> = (0..6)
            .map(|i| class_image(ReferralDecision::from_index(i % 3), i as u64))
            .collect();
        let samples: Vec<(&ImageSample, SoftLabel)> = images
            .iter()
            .enumerate()
            .map(|(i, img)| (img, ReferralDecision::from_index(i % 3).one_hot()))
            .collect();
        let teacher = BrightnessTeacher;
        let vit = VitConfig {
            embed_dim: 16,
            num_layers: 1,
            num_heads: 2,
            ..VitConfig::default()
        };
        let cfg = VisionTrainConfig {
            epochs: 3,
            ..VisionTrainConfig::default()
        };
        let (a, _) = train_vision_classifier(&samples, &teacher, vit.clone(), &cfg, 5).unwrap();
        let (b, _) = train_vision_classifier(&samples, &teacher, vit, &cfg, 5).unwrap();
        for ((name_a, ta), (name_b, tb)) in a.encoder.params.iter().zip(b.encoder.params.iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(ta.data(), tb.data(), "{name_a} diverged");
        }
    }

    #[test]
    fn two_hundred_sgd_steps_halve_training_loss() {
        // training sanity: 200 SGD steps over 40 images, loss drops >= 50%
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let class = ReferralDecision::from_index(i % 3);
            images.push(class_image(class, i as u64));
            labels.push(class);
        }
        let samples: Vec<(&ImageSample, SoftLabel)> = images
            .iter()
            .zip(&labels)
            .map(|(img, l)| (img, l.one_hot()))
            .collect();
        let teacher = BrightnessTeacher;
        let vit = VitConfig {
            embed_dim: 32,
            num_layers: 2,
            ..VitConfig::default()
        };
        let cfg = VisionTrainConfig {
            epochs: 5, // 5 epochs x 40 images = 200 steps
            learning_rate: 0.05,
            optimizer: "sgd".into(),
            mixup_prob: 0.0,
            cutmix_prob: 0.0,
        };
        let (_, stats) = train_vision_classifier(&samples, &teacher, vit, &cfg, 77).unwrap();
        assert!(
            stats.last_loss <= 0.5 * stats.first_loss,
            "first {} last {}",
            stats.first_loss,
            stats.last_loss
        );
    }
}
