//! End-to-end referral model: both encoders, the fused feature path, and the
//! trained heads, with unified checkpoint save/load.

use crate::data::{ReferralDecision, WoundCase};
use crate::error::{Error, Result};
use crate::fusion::{fuse, mlp_train, svm_train, HeadModel, MlpHead, MlpTrainConfig, SvmModel, SvmTrainConfig};
use crate::image::ImageSample;
use crate::rng::substream;
use crate::tensor::{load_checkpoint, save_checkpoint, ParamSet, Tensor};
use crate::text::{
    tokenize, train_text_classifier, ClinicalNote, TextClassifier, TextEncoder,
    TextEncoderConfig, TextTrainConfig, Vocabulary,
};
use crate::vision::{
    train_teacher, train_vision_classifier, VisionClassifier, VisionEncoder, VisionTrainConfig,
    VitConfig,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
    Fused,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
            Modality::Fused => "fused",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            "fused" => Ok(Modality::Fused),
            other => Err(Error::Config(format!(
                "unknown modality `{other}` (expected image, text or fused)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Svm,
    Mlp,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Svm => "svm",
            HeadKind::Mlp => "mlp",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(HeadKind::Svm),
            "mlp" => Ok(HeadKind::Mlp),
            other => Err(Error::Config(format!(
                "unknown head `{other}` (expected svm or mlp)"
            ))),
        }
    }
}

pub enum TrainedHead {
    Svm(SvmModel),
    Mlp(MlpHead),
}

impl TrainedHead {
    pub fn scores(&self, x: &[f64]) -> Result<[f64; 3]> {
        match self {
            TrainedHead::Svm(m) => m.scores(x),
            TrainedHead::Mlp(m) => m.scores(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<(ReferralDecision, [f64; 3])> {
        match self {
            TrainedHead::Svm(m) => m.predict(x),
            TrainedHead::Mlp(m) => m.predict(x),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineTrainConfig {
    pub vit: VitConfig,
    pub text: TextEncoderConfig,
    pub vision_train: VisionTrainConfig,
    pub text_train: TextTrainConfig,
    pub teacher_epochs: usize,
    pub teacher_learning_rate: f64,
    pub svm: SvmTrainConfig,
    pub mlp: MlpTrainConfig,
    /// Which (modality, head) pairs to fit; the first is the primary.
    pub heads: Vec<(Modality, HeadKind)>,
    pub normalize_fusion: bool,
}

impl Default for PipelineTrainConfig {
    fn default() -> Self {
        PipelineTrainConfig {
            vit: VitConfig::default(),
            text: TextEncoderConfig::default(),
            vision_train: VisionTrainConfig::default(),
            text_train: TextTrainConfig::default(),
            teacher_epochs: 8,
            teacher_learning_rate: 3e-3,
            svm: SvmTrainConfig::default(),
            mlp: MlpTrainConfig::default(),
            heads: vec![
                (Modality::Fused, HeadKind::Svm),
                (Modality::Fused, HeadKind::Mlp),
                (Modality::Image, HeadKind::Svm),
                (Modality::Text, HeadKind::Svm),
            ],
            normalize_fusion: false,
        }
    }
}

pub struct PipelineModel {
    pub vision: VisionClassifier,
    pub text: TextClassifier,
    pub vocab: Vocabulary,
    pub heads: Vec<((Modality, HeadKind), TrainedHead)>,
    pub primary: (Modality, HeadKind),
    pub normalize_fusion: bool,
}

impl PipelineModel {
    pub fn prepare_note(&self, raw: &str) -> ClinicalNote {
        tokenize(raw, &self.vocab, self.text.encoder.cfg.max_len)
    }

    pub fn image_embedding(&self, img: &ImageSample) -> Result<Vec<f64>> {
        Ok(self.vision.encoder.encode_image(img)?.fusion_embedding())
    }

    pub fn text_embedding(&self, note: &ClinicalNote) -> Result<Vec<f64>> {
        self.text.encoder.encode_note(note)
    }

    /// Feature vector for one modality condition.
    pub fn features(
        &self,
        modality: Modality,
        img: &ImageSample,
        note: &ClinicalNote,
    ) -> Result<Vec<f64>> {
        match modality {
            Modality::Image => self.image_embedding(img),
            Modality::Text => self.text_embedding(note),
            Modality::Fused => {
                let i = self.image_embedding(img)?;
                let t = self.text_embedding(note)?;
                Ok(fuse(&i, &t, "predict", self.normalize_fusion)?.vector)
            }
        }
    }

    pub fn head(&self, modality: Modality, kind: HeadKind) -> Result<&TrainedHead> {
        self.heads
            .iter()
            .find(|((m, k), _)| *m == modality && *k == kind)
            .map(|(_, h)| h)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no trained head for ({modality}, {kind})"))
            })
    }

    pub fn predict_with(
        &self,
        modality: Modality,
        kind: HeadKind,
        img: &ImageSample,
        note: &ClinicalNote,
    ) -> Result<(ReferralDecision, [f64; 3])> {
        let x = self.features(modality, img, note)?;
        self.head(modality, kind)?.predict(&x)
    }

    /// Predict with the primary head.
    pub fn predict(
        &self,
        img: &ImageSample,
        note: &ClinicalNote,
    ) -> Result<(ReferralDecision, [f64; 3])> {
        self.predict_with(self.primary.0, self.primary.1, img, note)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        for (name, t) in self.vision.encoder.params.iter() {
            tensors.push((format!("vision.{name}"), t));
        }
        for (name, t) in self.vision.head.iter() {
            tensors.push((format!("vision_head.{name}"), t));
        }
        for (name, t) in self.text.encoder.params.iter() {
            tensors.push((format!("text.{name}"), t));
        }
        for (name, t) in self.text.head.iter() {
            tensors.push((format!("text_head.{name}"), t));
        }

        // SVM heads live as tensors too; MLP heads as their param sets
        let mut svm_tensors: Vec<(String, Tensor)> = Vec::new();
        let mut head_meta = Vec::new();
        for ((m, k), head) in &self.heads {
            let pfx = format!("head.{m}.{k}");
            match head {
                TrainedHead::Svm(svm) => {
                    let dim = svm.w[0].len();
                    let flat: Vec<f64> = svm.w.iter().flatten().copied().collect();
                    svm_tensors.push((format!("{pfx}.w"), Tensor::new(&[3, dim], flat)?));
                    svm_tensors.push((format!("{pfx}.b"), Tensor::new(&[1, 3], svm.b.clone())?));
                    head_meta.push(serde_json::json!({
                        "modality": m, "kind": k, "c": svm.c,
                    }));
                }
                TrainedHead::Mlp(mlp) => {
                    head_meta.push(serde_json::json!({
                        "modality": m, "kind": k,
                        "input_dim": mlp.input_dim, "hidden": mlp.hidden,
                    }));
                }
            }
        }
        for (name, t) in &svm_tensors {
            tensors.push((name.clone(), t));
        }
        let mlp_sets: Vec<(String, &ParamSet)> = self
            .heads
            .iter()
            .filter_map(|((m, k), h)| match h {
                TrainedHead::Mlp(mlp) => Some((format!("head.{m}.{k}"), &mlp.params)),
                TrainedHead::Svm(_) => None,
            })
            .collect();
        for (pfx, set) in &mlp_sets {
            for (name, t) in set.iter() {
                tensors.push((format!("{pfx}.{name}"), t));
            }
        }

        let config = serde_json::json!({
            "vit": self.vision.encoder.cfg,
            "image_hw": [self.vision.encoder.image_hw.0, self.vision.encoder.image_hw.1],
            "pixel_mean": self.vision.encoder.pixel_mean,
            "text": self.text.encoder.cfg,
            "vocab": self.vocab.to_json_value(),
            "heads": head_meta,
            "primary": [self.primary.0, self.primary.1],
            "normalize_fusion": self.normalize_fusion,
        });
        save_checkpoint(path, &config, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let cfg = &ckpt.config;
        let vit: VitConfig = serde_json::from_value(cfg["vit"].clone())?;
        let text_cfg: TextEncoderConfig = serde_json::from_value(cfg["text"].clone())?;
        let image_hw: (usize, usize) = serde_json::from_value(cfg["image_hw"].clone())?;
        let pixel_mean: [f64; 3] = serde_json::from_value(cfg["pixel_mean"].clone())?;
        let vocab = Vocabulary::from_json_value(&cfg["vocab"])?;
        let primary: (Modality, HeadKind) = serde_json::from_value(cfg["primary"].clone())?;
        let normalize_fusion = cfg["normalize_fusion"].as_bool().unwrap_or(false);

        // rebuild with throwaway init, then overwrite every tensor by name
        let mut rng = substream(0, "ckpt-load");
        let mut vision_enc = VisionEncoder::new(vit, image_hw, &mut rng)?;
        vision_enc.pixel_mean = pixel_mean;
        load_params(&mut vision_enc.params, &ckpt.tensors, "vision.")?;
        let mut vision = VisionClassifier::new(vision_enc, &mut rng);
        load_params(&mut vision.head, &ckpt.tensors, "vision_head.")?;

        let mut text_enc = TextEncoder::new(text_cfg, vocab.len(), &mut rng)?;
        load_params(&mut text_enc.params, &ckpt.tensors, "text.")?;
        let mut text = TextClassifier::new(text_enc, &mut rng);
        load_params(&mut text.head, &ckpt.tensors, "text_head.")?;

        let mut heads = Vec::new();
        for meta in cfg["heads"].as_array().cloned().unwrap_or_default() {
            let m: Modality = serde_json::from_value(meta["modality"].clone())?;
            let k: HeadKind = serde_json::from_value(meta["kind"].clone())?;
            let pfx = format!("head.{m}.{k}");
            let head = match k {
                HeadKind::Svm => {
                    let w = ckpt.tensor(&format!("{pfx}.w"))?;
                    let b = ckpt.tensor(&format!("{pfx}.b"))?;
                    TrainedHead::Svm(SvmModel {
                        w: (0..3).map(|r| w.row_slice(r).to_vec()).collect(),
                        b: b.data().to_vec(),
                        c: meta["c"].as_f64().unwrap_or(1.0),
                    })
                }
                HeadKind::Mlp => {
                    let input_dim = meta["input_dim"].as_u64().unwrap_or(0) as usize;
                    let hidden = meta["hidden"].as_u64().unwrap_or(0) as usize;
                    let mut mlp = MlpHead::new(input_dim, hidden, &mut rng);
                    load_params(&mut mlp.params, &ckpt.tensors, &format!("{pfx}."))?;
                    TrainedHead::Mlp(mlp)
                }
            };
            heads.push(((m, k), head));
        }

        Ok(PipelineModel {
            vision,
            text,
            vocab,
            heads,
            primary,
            normalize_fusion,
        })
    }
}

fn load_params(params: &mut ParamSet, tensors: &[(String, Tensor)], prefix: &str) -> Result<()> {
    for i in 0..params.len() {
        let id = crate::tensor::ParamId(i);
        let full = format!("{prefix}{}", params.name(id));
        let found = tensors
            .iter()
            .find(|(n, _)| *n == full)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::InvalidData(format!("checkpoint missing tensor `{full}`")))?;
        if found.shape() != params.value(id).shape() {
            return Err(Error::InvalidData(format!(
                "checkpoint tensor `{full}` has shape {:?}, expected {:?}",
                found.shape(),
                params.value(id).shape()
            )));
        }
        *params.value_mut(id) = found;
    }
    Ok(())
}

/// Train the full pipeline on one set of (typically balanced) cases.
pub fn train_pipeline(
    cases: &[WoundCase],
    dataset_root: &Path,
    cfg: &PipelineTrainConfig,
    seed: u64,
) -> Result<PipelineModel> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("pipeline: no training cases".into()));
    }
    if cfg.heads.is_empty() {
        return Err(Error::Config("pipeline: no heads requested".into()));
    }

    let images: Vec<ImageSample> = cases
        .iter()
        .map(|c| ImageSample::read(&dataset_root.join(&c.image_path)))
        .collect::<Result<_>>()?;
    let labels: Vec<ReferralDecision> = cases.iter().map(|c| c.dec_final).collect();

    // teacher first, then the distilled student
    let teacher_samples: Vec<(&ImageSample, ReferralDecision)> =
        images.iter().zip(labels.iter().copied()).collect();
    let teacher = train_teacher(
        &teacher_samples,
        cfg.teacher_epochs,
        cfg.teacher_learning_rate,
        seed,
    )?;
    let vision_samples: Vec<(&ImageSample, [f64; 3])> = images
        .iter()
        .zip(&labels)
        .map(|(img, l)| (img, l.one_hot()))
        .collect();
    let (vision, _) = train_vision_classifier(
        &vision_samples,
        &teacher,
        cfg.vit.clone(),
        &cfg.vision_train,
        seed,
    )?;

    // vocabulary comes from the training notes only
    let vocab = Vocabulary::build(cases.iter().map(|c| c.note.as_str()));
    let notes: Vec<ClinicalNote> = cases
        .iter()
        .map(|c| tokenize(&c.note, &vocab, cfg.text.max_len))
        .collect();
    let text_samples: Vec<(&ClinicalNote, [f64; 3])> = notes
        .iter()
        .zip(&labels)
        .map(|(n, l)| (n, l.one_hot()))
        .collect();
    let (text, _) = train_text_classifier(
        &text_samples,
        vocab.len(),
        cfg.text.clone(),
        &cfg.text_train,
        seed,
    )?;

    // frozen embeddings once, then every requested head on top
    let mut img_embs = Vec::with_capacity(cases.len());
    let mut txt_embs = Vec::with_capacity(cases.len());
    for (img, note) in images.iter().zip(&notes) {
        img_embs.push(vision.encoder.encode_image(img)?.fusion_embedding());
        txt_embs.push(text.encoder.encode_note(note)?);
    }

    let mut heads = Vec::new();
    for &(modality, kind) in &cfg.heads {
        let features: Vec<Vec<f64>> = match modality {
            Modality::Image => img_embs.clone(),
            Modality::Text => txt_embs.clone(),
            Modality::Fused => img_embs
                .iter()
                .zip(&txt_embs)
                .enumerate()
                .map(|(i, (ie, te))| {
                    fuse(ie, te, &cases[i].case_id, cfg.normalize_fusion).map(|f| f.vector)
                })
                .collect::<Result<_>>()?,
        };
        let head = match kind {
            HeadKind::Svm => {
                let (m, _) = svm_train(&features, &labels, &cfg.svm)?;
                TrainedHead::Svm(m)
            }
            HeadKind::Mlp => TrainedHead::Mlp(mlp_train(&features, &labels, &cfg.mlp, seed)?),
        };
        heads.push(((modality, kind), head));
    }

    Ok(PipelineModel {
        vision,
        text,
        vocab,
        heads,
        primary: cfg.heads[0],
        normalize_fusion: cfg.normalize_fusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, GeneratorSpec};

    fn tiny_train_config() -> PipelineTrainConfig {
        PipelineTrainConfig {
            vit: VitConfig {
                embed_dim: 16,
                num_layers: 1,
                num_heads: 2,
                ..VitConfig::default()
            },
            text: TextEncoderConfig {
                embed_dim: 16,
                num_layers: 1,
                num_heads: 2,
                max_len: 16,
                relative_bucket_k: 4,
                emd_layers: 1,
            },
            vision_train: VisionTrainConfig {
                epochs: 1,
                ..VisionTrainConfig::default()
            },
            text_train: TextTrainConfig {
                mlm_epochs: 0,
                epochs: 1,
                ..TextTrainConfig::default()
            },
            teacher_epochs: 1,
            ..PipelineTrainConfig::default()
        }
    }

    #[test]
    fn train_save_load_predict_roundtrip() {
        let dir = std::env::temp_dir().join(format!("dmwat-pipe-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let spec = GeneratorSpec::sized(24, 3);
        let (cases, _) = generate_synthetic_dataset(&spec, &dir).unwrap();

        let model = train_pipeline(&cases, &dir, &tiny_train_config(), 5).unwrap();
        let ckpt = dir.join("model.ckpt");
        model.save(&ckpt).unwrap();
        let loaded = PipelineModel::load(&ckpt).unwrap();

        let img = ImageSample::read(&dir.join(&cases[0].image_path)).unwrap();
        let note = model.prepare_note(&cases[0].note);
        let (pred_a, scores_a) = model.predict(&img, &note).unwrap();
        let (pred_b, scores_b) = loaded.predict(&img, &note).unwrap();
        assert_eq!(pred_a, pred_b);
        for (a, b) in scores_a.iter().zip(&scores_b) {
            assert!((a - b).abs() < 1e-12);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
