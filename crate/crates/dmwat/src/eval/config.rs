//! Run configuration: one JSON file drives generation, training, evaluation
//! and explanation. Unknown fields are rejected, and validation errors print
//! the canonical example so a working config is always one copy-paste away.

use crate::error::{Error, Result};
use crate::fusion::{MlpTrainConfig, SvmTrainConfig};
use crate::pipeline::{HeadKind, Modality, PipelineTrainConfig};
use crate::text::{TextEncoderConfig, TextTrainConfig};
use crate::vision::augment::AugmentKind;
use crate::vision::{VisionTrainConfig, VitConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum BalanceMode {
    /// Leave class counts as they are.
    None,
    /// Upsample every class to the current maximum count.
    Equalize,
    /// Explicit per-class targets.
    Targets([usize; 3]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub balance: BalanceMode,
    /// Policies the balancing augmentor may draw from.
    pub policies: Vec<AugmentKind>,
    /// In-flight Mixup/CutMix probabilities during vision training.
    pub mixup_prob: f64,
    pub cutmix_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            balance: BalanceMode::Equalize,
            policies: crate::vision::augment::ALL_AUGMENT_KINDS.to_vec(),
            mixup_prob: 0.1,
            cutmix_prob: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochsConfig {
    pub teacher: usize,
    pub vision: usize,
    pub text_mlm: usize,
    pub text: usize,
    pub head: usize,
}

impl Default for EpochsConfig {
    fn default() -> Self {
        EpochsConfig {
            teacher: 8,
            vision: 5,
            text_mlm: 2,
            text: 5,
            head: 150,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; all randomness flows from it through named substreams.
    pub seed: u64,
    /// Path to the JSON-Lines dataset.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub k_folds: usize,
    /// Primary head and modality (prediction and explanation default).
    pub head: HeadKind,
    pub modality: Modality,
    pub tta_views: usize,
    pub epochs: EpochsConfig,
    /// Encoder learning rate.
    pub learning_rate: f64,
    pub vision: VitConfig,
    pub text: TextEncoderConfig,
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub normalize_fusion: bool,
}

impl RunConfig {
    /// Desk-scale defaults against a dataset path.
    pub fn example() -> Self {
        RunConfig {
            seed: 7,
            dataset: PathBuf::from("data/dataset.jsonl"),
            out_dir: PathBuf::from("runs/example"),
            k_folds: 5,
            head: HeadKind::Svm,
            modality: Modality::Fused,
            tta_views: 1,
            epochs: EpochsConfig::default(),
            learning_rate: 1e-3,
            vision: VitConfig {
                embed_dim: 32,
                num_layers: 2,
                num_heads: 4,
                ..VitConfig::default()
            },
            text: TextEncoderConfig {
                embed_dim: 32,
                num_layers: 2,
                num_heads: 4,
                max_len: 20,
                relative_bucket_k: 8,
                emd_layers: 1,
            },
            augmentation: AugmentationConfig::default(),
            normalize_fusion: false,
        }
    }

    pub fn canonical_example_json() -> String {
        serde_json::to_string_pretty(&Self::example()).expect("static example")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.exists() {
            return Err(Error::Config(format!(
                "dataset file {} does not exist",
                self.dataset.display()
            )));
        }
        if self.k_folds < 2 {
            return Err(Error::Config("k_folds must be at least 2".into()));
        }
        if self.tta_views < 1 {
            return Err(Error::Config("tta_views must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for p in [self.augmentation.mixup_prob, self.augmentation.cutmix_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("mix probabilities must lie in [0,1]".into()));
            }
        }
        if self.augmentation.policies.is_empty() {
            return Err(Error::Config("augmentation.policies must not be empty".into()));
        }
        self.vision.validate()?;
        self.text.validate()?;
        Ok(())
    }

    /// Root directory the dataset's relative image paths resolve against.
    pub fn dataset_root(&self) -> PathBuf {
        self.dataset
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// Training configuration for one pipeline fit. `heads` lists every
    /// (modality, head) condition to train, primary first.
    pub fn train_config(&self, heads: Vec<(Modality, HeadKind)>) -> PipelineTrainConfig {
        PipelineTrainConfig {
            vit: self.vision.clone(),
            text: self.text.clone(),
            vision_train: VisionTrainConfig {
                epochs: self.epochs.vision,
                learning_rate: self.learning_rate,
                optimizer: "adaptive".into(),
                mixup_prob: self.augmentation.mixup_prob,
                cutmix_prob: self.augmentation.cutmix_prob,
            },
            text_train: TextTrainConfig {
                mlm_epochs: self.epochs.text_mlm,
                epochs: self.epochs.text,
                learning_rate: self.learning_rate,
                optimizer: "adaptive".into(),
            },
            teacher_epochs: self.epochs.teacher,
            teacher_learning_rate: 3e-3,
            svm: SvmTrainConfig {
                epochs: self.epochs.head,
                ..SvmTrainConfig::default()
            },
            mlp: MlpTrainConfig {
                epochs: self.epochs.head.min(80),
                ..MlpTrainConfig::default()
            },
            heads,
            normalize_fusion: self.normalize_fusion,
        }
    }

    /// All six (modality, head) conditions with the primary pair first.
    pub fn all_conditions(&self) -> Vec<(Modality, HeadKind)> {
        let mut conditions = vec![(self.modality, self.head)];
        for m in [Modality::Image, Modality::Text, Modality::Fused] {
            for k in [HeadKind::Svm, HeadKind::Mlp] {
                if !conditions.contains(&(m, k)) {
                    conditions.push((m, k));
                }
            }
        }
        conditions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_example_parses_back() {
        let json = RunConfig::canonical_example_json();
        let cfg: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.k_folds, 5);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&RunConfig::canonical_example_json()).unwrap();
        v["surprise"] = serde_json::json!(1);
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_value(v);
        assert!(parsed.is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::example();
        cfg.dataset = std::env::temp_dir(); // exists; next checks fire
        cfg.k_folds = 1;
        assert!(cfg.validate().is_err());
        cfg.k_folds = 5;
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn all_conditions_cover_six_pairs_primary_first() {
        let cfg = RunConfig::example();
        let conds = cfg.all_conditions();
        assert_eq!(conds.len(), 6);
        assert_eq!(conds[0], (Modality::Fused, HeadKind::Svm));
    }
}
