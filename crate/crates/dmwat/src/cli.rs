//! Implementations behind the `dmwat` binary's subcommands. The binary
//! itself only parses flags and dispatches here.

use crate::data::{
    balance_upsample, equalized_targets, generate_synthetic_dataset, load_dataset,
    save_dataset, stratified_kfold, GeneratorSpec, ImageCaseAugmentor, TextAugmentClient,
    WoundCase,
};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, cross_validate, persist_report, BalanceMode, RunConfig};
use crate::image::ImageSample;
use crate::interpret::{
    deletion_check, integrated_gradients, score_cam, write_attribution_report,
    write_saliency_maps, ScoreCamConfig,
};
use crate::pipeline::{train_pipeline, HeadKind, Modality, PipelineModel};
use crate::rng::derive_seed;
use crate::eval::tta_majority_vote;
use std::fs;
use std::path::{Path, PathBuf};

/// Flag overrides shared by config-driven subcommands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub head: Option<HeadKind>,
    pub modality: Option<Modality>,
    pub tta: Option<usize>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(head) = overrides.head {
        cfg.head = head;
    }
    if let Some(modality) = overrides.modality {
        cfg.modality = modality;
    }
    if let Some(tta) = overrides.tta {
        cfg.tta_views = tta;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `gen-data`: write a seeded synthetic dataset.
pub fn gen_data(out: &Path, cases: usize, seed: u64) -> Result<()> {
    let spec = GeneratorSpec::sized(cases, seed);
    let (cases, _) = generate_synthetic_dataset(&spec, out)?;
    let hist = crate::data::class_histogram(&cases);
    println!(
        "wrote {} cases ({} class-1, {} class-2, {} class-3) under {}",
        cases.len(),
        hist[0],
        hist[1],
        hist[2],
        out.display()
    );
    Ok(())
}

/// `train`: hold out one stratified fold for validation, fit on the rest,
/// write a checkpoint, report validation metrics.
pub fn train(cfg: &RunConfig) -> Result<PathBuf> {
    let cases = load_dataset(&cfg.dataset)?;
    let root = cfg.dataset_root();
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;

    let folds = stratified_kfold(&cases, cfg.k_folds, cfg.seed)?;
    let (train_cases, val_cases) = folds.split(&cases, 0)?;
    let train_owned: Vec<WoundCase> = train_cases.iter().map(|c| (*c).clone()).collect();
    let balanced = balance_cases(cfg, &train_owned, &root, &cfg.out_dir.join("aug"))?;

    let seed = derive_seed(cfg.seed, "train");
    let model = train_pipeline(&balanced, &root, &cfg.train_config(cfg.all_conditions()), seed)?;
    let ckpt = cfg.out_dir.join("model.ckpt");
    model.save(&ckpt)?;
    model.vocab.save_json(&cfg.out_dir.join("vocab.json"))?;

    let originals: Vec<&WoundCase> = val_cases
        .iter()
        .copied()
        .filter(|c| !c.is_synthetic_augment)
        .collect();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for case in &originals {
        let img = ImageSample::read(&root.join(&case.image_path))?;
        let note = model.prepare_note(&case.note);
        preds.push(model.predict(&img, &note)?.0);
        labels.push(case.dec_final);
    }
    let metrics = compute_metrics(&preds, &labels)?;
    println!(
        "checkpoint: {}\nheld-out fold 0: accuracy {:.3}, macro-F1 {:.3} over {} cases",
        ckpt.display(),
        metrics.accuracy,
        metrics.macro_f1,
        metrics.n
    );
    Ok(ckpt)
}

fn balance_cases(
    cfg: &RunConfig,
    cases: &[WoundCase],
    root: &Path,
    aug_dir: &Path,
) -> Result<Vec<WoundCase>> {
    match &cfg.augmentation.balance {
        BalanceMode::None => Ok(cases.to_vec()),
        mode => {
            let targets = match mode {
                BalanceMode::Equalize => equalized_targets(cases),
                BalanceMode::Targets(t) => *t,
                BalanceMode::None => unreachable!(),
            };
            let mut augmentor = ImageCaseAugmentor::detached(root, aug_dir)?
                .with_policies(cfg.augmentation.policies.clone());
            balance_upsample(cases, targets, &mut augmentor, derive_seed(cfg.seed, "balance"))
        }
    }
}

/// `evaluate`: full cross-validated comparison; writes metrics.json and
/// table.txt under the output directory.
pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let report = cross_validate(cfg)?;
    persist_report(&report, &cfg.out_dir)?;
    print!("{}", report.render_table());
    println!(
        "metrics: {}",
        cfg.out_dir.join("metrics.json").display()
    );
    Ok(())
}

fn find_case<'a>(cases: &'a [WoundCase], case_id: &str) -> Result<&'a WoundCase> {
    cases
        .iter()
        .find(|c| c.case_id == case_id)
        .ok_or_else(|| Error::InvalidArgument(format!("case `{case_id}` not found in dataset")))
}

/// `predict`: one decision plus per-class scores for one case.
pub fn predict(cfg: &RunConfig, checkpoint: &Path, case_id: &str) -> Result<()> {
    let cases = load_dataset(&cfg.dataset)?;
    let case = find_case(&cases, case_id)?;
    let model = PipelineModel::load(checkpoint)?;
    let root = cfg.dataset_root();
    let img = ImageSample::read(&root.join(&case.image_path))?;
    let note = model.prepare_note(&case.note);

    if cfg.tta_views > 1 {
        let (decision, votes) =
            tta_majority_vote(&img, &note, &model, cfg.tta_views, derive_seed(cfg.seed, "tta"))?;
        let (_, scores) = model.predict(&img, &note)?;
        println!(
            "case {case_id}: decision {decision} by {}-view majority (votes {:?}), single-view scores [{:.4}, {:.4}, {:.4}]",
            cfg.tta_views,
            votes.iter().map(|v| v.ordinal()).collect::<Vec<_>>(),
            scores[0],
            scores[1],
            scores[2]
        );
    } else {
        let (decision, scores) = model.predict(&img, &note)?;
        println!(
            "case {case_id}: decision {decision}, scores [{:.4}, {:.4}, {:.4}]",
            scores[0], scores[1], scores[2]
        );
    }
    Ok(())
}

/// `explain`: Score-CAM saliency for the image modality, Integrated
/// Gradients for text. Artifacts land under the output directory.
pub fn explain(cfg: &RunConfig, checkpoint: &Path, case_id: &str, steps: usize) -> Result<()> {
    let cases = load_dataset(&cfg.dataset)?;
    let case = find_case(&cases, case_id)?;
    let model = PipelineModel::load(checkpoint)?;
    let root = cfg.dataset_root();
    let img = ImageSample::read(&root.join(&case.image_path))?;
    let note = model.prepare_note(&case.note);
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;

    let (decision, _) = model.predict(&img, &note)?;
    let target = decision.index();

    match cfg.modality {
        Modality::Text => {
            let report = integrated_gradients(&note, &model.text, &model.vocab, target, steps)?;
            let stem = cfg.out_dir.join(format!("{case_id}_attribution"));
            let (json, html) = write_attribution_report(&report, &stem)?;
            println!(
                "attribution for {case_id} (class {}): {} and {} (completeness gap {:.3e})",
                target + 1,
                json.display(),
                html.display(),
                report.completeness_gap
            );
        }
        _ => {
            let map = score_cam(&img, &model.vision, target, &ScoreCamConfig::default())?;
            let stem = cfg.out_dir.join(format!("{case_id}_saliency"));
            let (gray, overlay) = write_saliency_maps(&map, &img, &stem)?;
            let drops =
                deletion_check(&img, &map, &model.vision, 0.2, derive_seed(cfg.seed, "deletion"))?;
            println!(
                "saliency for {case_id} (class {}): {} and {}; deletion drops top {:.4} vs random {:.4}",
                target + 1,
                gray.display(),
                overlay.display(),
                drops.top_k,
                drops.random_k
            );
        }
    }
    Ok(())
}

/// `augment`: materialize a balanced dataset into a self-contained directory
/// (original images copied, augments written beside them).
pub fn augment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cases = load_dataset(&cfg.dataset)?;
    let root = cfg.dataset_root();
    let images_dir = out.join("images");
    fs::create_dir_all(&images_dir)
        .map_err(|e| Error::io(images_dir.display().to_string(), e))?;

    // copy originals so the output directory stands alone
    let mut relocated = Vec::with_capacity(cases.len());
    for case in &cases {
        let file = Path::new(&case.image_path)
            .file_name()
            .ok_or_else(|| Error::InvalidData(format!("bad image path {}", case.image_path)))?;
        let dest = images_dir.join(file);
        fs::copy(root.join(&case.image_path), &dest)
            .map_err(|e| Error::io(dest.display().to_string(), e))?;
        let mut c = case.clone();
        c.image_path = format!("images/{}", file.to_string_lossy());
        relocated.push(c);
    }

    let client = TextAugmentClient::from_env();
    let targets = match &cfg.augmentation.balance {
        BalanceMode::None => equalized_targets(&relocated),
        BalanceMode::Equalize => equalized_targets(&relocated),
        BalanceMode::Targets(t) => *t,
    };
    let balanced = {
        let mut augmentor = ImageCaseAugmentor::inside_dataset(out, "aug")?
            .with_policies(cfg.augmentation.policies.clone())
            .with_text_client(&client);
        balance_upsample(&relocated, targets, &mut augmentor, derive_seed(cfg.seed, "augment"))?
    };
    save_dataset(&out.join("dataset.jsonl"), &balanced)?;
    let hist = crate::data::class_histogram(&balanced);
    println!(
        "materialized {} cases ({}/{}/{}) at {}",
        balanced.len(),
        hist[0],
        hist[1],
        hist[2],
        out.join("dataset.jsonl").display()
    );
    Ok(())
}
