//! Stratified cross-validation orchestration: per fold, balance the training
//! split only, train encoders and every head condition once, and evaluate on
//! the untouched originals of the held-out fold.

use super::config::{BalanceMode, RunConfig};
use super::metrics::{compute_metrics, summarize_folds, FoldSummary, MetricsReport};
use crate::data::{
    balance_upsample, equalized_targets, load_dataset, stratified_kfold, ImageCaseAugmentor,
    ReferralDecision, WoundCase,
};
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::pipeline::{train_pipeline, HeadKind, Modality};
use crate::rng::derive_seed;
use crate::text::ClinicalNote;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub modality: Modality,
    pub head: HeadKind,
    pub summary: FoldSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub k_folds: usize,
    pub dataset_cases: usize,
    pub conditions: Vec<ConditionReport>,
}

impl EvaluationReport {
    pub fn condition(&self, modality: Modality, head: HeadKind) -> Option<&ConditionReport> {
        self.conditions
            .iter()
            .find(|c| c.modality == modality && c.head == head)
    }

    /// Plain-text comparison table: image-based, text-based, multimodal rows
    /// with mean +/- std percentages.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>10} {:>10} {:>10} {:>10}\n",
            "Condition", "Acc", "Rec", "Prec", "F1"
        ));
        let section = |title: &str, modality: Modality, out: &mut String| {
            out.push_str(&format!("-- {title}\n"));
            for cond in &self.conditions {
                if cond.modality != modality {
                    continue;
                }
                let m = &cond.summary.mean;
                let s = &cond.summary.std;
                let cell = |mean: f64, std: f64| {
                    format!("{:.0}±{:.0}", mean * 100.0, std * 100.0)
                };
                out.push_str(&format!(
                    "{:<24} {:>10} {:>10} {:>10} {:>10}\n",
                    format!("{} + {}", cond.modality, cond.head),
                    cell(m.accuracy, s.accuracy),
                    cell(m.macro_recall, s.macro_recall),
                    cell(m.macro_precision, s.macro_precision),
                    cell(m.macro_f1, s.macro_f1),
                ));
            }
        };
        section("Image-based", Modality::Image, &mut out);
        section("Text-based", Modality::Text, &mut out);
        section("Multimodal", Modality::Fused, &mut out);
        out
    }
}

/// Per-case prediction row persisted for each fold.
#[derive(Debug, Serialize)]
struct PredictionRow<'a> {
    case_id: &'a str,
    label: ReferralDecision,
    condition: String,
    predicted: ReferralDecision,
    scores: [f64; 3],
}

pub fn cross_validate(cfg: &RunConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let cases = load_dataset(&cfg.dataset)?;
    let root = cfg.dataset_root();
    let conditions = cfg.all_conditions();
    let folds = stratified_kfold(&cases, cfg.k_folds, cfg.seed)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;

    let mut fold_reports: Vec<Vec<MetricsReport>> = vec![Vec::new(); conditions.len()];

    for fold in 0..cfg.k_folds {
        let (train, test) = folds.split(&cases, fold)?;
        // only untouched originals are evaluated
        let test: Vec<&WoundCase> = test
            .into_iter()
            .filter(|c| !c.is_synthetic_augment)
            .collect();
        // leakage guard: nothing in the training split may descend from a
        // test-fold case
        for case in &train {
            if folds.fold_of(case)? == fold {
                return Err(Error::InvalidData(format!(
                    "leakage: case {} descends from held-out fold {fold}",
                    case.case_id
                )));
            }
        }

        let fold_dir = cfg.out_dir.join(format!("fold{fold}"));
        fs::create_dir_all(&fold_dir)
            .map_err(|e| Error::io(fold_dir.display().to_string(), e))?;
        let fold_seed = derive_seed(cfg.seed, &format!("fold{fold}"));

        // balance the training split only, materializing augments under the
        // fold directory (absolute paths keep the dataset root unified)
        let train_owned: Vec<WoundCase> = train.iter().map(|c| (*c).clone()).collect();
        let balanced = match &cfg.augmentation.balance {
            BalanceMode::None => train_owned,
            mode => {
                let targets = match mode {
                    BalanceMode::Equalize => equalized_targets(&train_owned),
                    BalanceMode::Targets(t) => *t,
                    BalanceMode::None => unreachable!(),
                };
                let mut augmentor = ImageCaseAugmentor::detached(&root, &fold_dir.join("aug"))?
                    .with_policies(cfg.augmentation.policies.clone());
                balance_upsample(&train_owned, targets, &mut augmentor, fold_seed)?
            }
        };

        let train_cfg = cfg.train_config(conditions.clone());
        let model = train_pipeline(&balanced, &root, &train_cfg, fold_seed)?;
        model.save(&fold_dir.join("model.ckpt"))?;

        // evaluate every condition on the held-out originals
        let mut rows: Vec<String> = Vec::new();
        let mut labels = Vec::with_capacity(test.len());
        let mut images: Vec<ImageSample> = Vec::with_capacity(test.len());
        let mut notes: Vec<ClinicalNote> = Vec::with_capacity(test.len());
        for case in &test {
            labels.push(case.dec_final);
            images.push(ImageSample::read(&root.join(&case.image_path))?);
            notes.push(model.prepare_note(&case.note));
        }
        for (ci, &(modality, head)) in conditions.iter().enumerate() {
            let mut preds = Vec::with_capacity(test.len());
            for ((case, img), note) in test.iter().zip(&images).zip(&notes) {
                let (pred, scores) = model.predict_with(modality, head, img, note)?;
                preds.push(pred);
                rows.push(serde_json::to_string(&PredictionRow {
                    case_id: &case.case_id,
                    label: case.dec_final,
                    condition: format!("{modality}+{head}"),
                    predicted: pred,
                    scores,
                })?);
            }
            fold_reports[ci].push(compute_metrics(&preds, &labels)?);
        }
        fs::write(fold_dir.join("predictions.jsonl"), rows.join("\n") + "\n")
            .map_err(|e| Error::io(fold_dir.display().to_string(), e))?;
    }

    let mut condition_reports = Vec::with_capacity(conditions.len());
    for ((modality, head), reports) in conditions.into_iter().zip(fold_reports) {
        condition_reports.push(ConditionReport {
            modality,
            head,
            summary: summarize_folds(reports)?,
        });
    }
    // stable order in the report regardless of primary choice
    condition_reports.sort_by_key(|c| (c.modality, c.head));
    Ok(EvaluationReport {
        seed: cfg.seed,
        k_folds: cfg.k_folds,
        dataset_cases: cases.len(),
        conditions: condition_reports,
    })
}

/// Write `metrics.json` and `table.txt` under the config's output directory.
pub fn persist_report(report: &EvaluationReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(report)?;
    let json_path = out_dir.join("metrics.json");
    fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let table_path = out_dir.join("table.txt");
    fs::write(&table_path, report.render_table())
        .map_err(|e| Error::io(table_path.display().to_string(), e))?;
    Ok(())
}
