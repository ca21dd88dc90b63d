//! Score-CAM saliency on a trained vision classifier: heatmaps over the
//! lesion, plus the deletion-metric faithfulness check.
//!
//! Run: cargo run --release -p dmwat --example explain_saliency

use dmwat::data::{generate_synthetic_dataset, GeneratorSpec, ReferralDecision};
use dmwat::image::ImageSample;
use dmwat::interpret::{deletion_check, score_cam, write_saliency_maps, ScoreCamConfig};
use dmwat::vision::{train_teacher, train_vision_classifier, VisionTrainConfig, VitConfig};
use std::path::Path;

fn main() -> dmwat::Result<()> {
    let out = Path::new("target/example-runs/explain_saliency");
    std::fs::remove_dir_all(out).ok();
    let (cases, infos) = generate_synthetic_dataset(&GeneratorSpec::sized(160, 33), out)?;
    let images: Vec<ImageSample> = cases
        .iter()
        .map(|c| ImageSample::read(&out.join(&c.image_path)))
        .collect::<dmwat::Result<_>>()?;

    let teacher_samples: Vec<_> = images.iter().zip(cases.iter().map(|c| c.dec_final)).collect();
    let teacher = train_teacher(&teacher_samples, 4, 3e-3, 33)?;
    let samples: Vec<_> = images
        .iter()
        .zip(cases.iter().map(|c| c.dec_final.one_hot()))
        .collect();
    let (model, _) = train_vision_classifier(
        &samples,
        &teacher,
        VitConfig {
            embed_dim: 32,
            num_layers: 2,
            distillation_alpha: 1.0,
            ..VitConfig::default()
        },
        &VisionTrainConfig {
            epochs: 16,
            learning_rate: 1e-3,
            optimizer: "adaptive".into(),
            mixup_prob: 0.0,
            cutmix_prob: 0.0,
        },
        33,
    )?;

    // saliency over the first 20 urgent cases: does the map sit on the
    // lesion the generator drew, and does deleting it hurt confidence?
    let mut localized = 0;
    let mut deletion_wins = 0;
    let mut shown = false;
    let mut n = 0;
    for (i, (case, info)) in cases.iter().zip(&infos).enumerate() {
        if case.dec_final != ReferralDecision::UrgentChange || n >= 20 {
            continue;
        }
        n += 1;
        let img = &images[i];
        let map = score_cam(img, &model, 2, &ScoreCamConfig::default())?;
        if !shown {
            let (gray, overlay) = write_saliency_maps(&map, img, &out.join("urgent_saliency"))?;
            println!("saliency written: {} and {}", gray.display(), overlay.display());
            shown = true;
        }
        let (mut inside, mut outside, mut n_in, mut n_out) = (0.0, 0.0, 0usize, 0usize);
        for r in 0..img.height() {
            for c in 0..img.width() {
                if info.lesion.contains(r, c) {
                    inside += map.get(r, c);
                    n_in += 1;
                } else {
                    outside += map.get(r, c);
                    n_out += 1;
                }
            }
        }
        if inside / n_in as f64 > outside / n_out as f64 {
            localized += 1;
        }
        let drops = deletion_check(img, &map, &model, 0.2, 500 + i as u64)?;
        if drops.top_k > drops.random_k {
            deletion_wins += 1;
        }
    }
    println!("lesion localization: {localized}/{n} urgent cases");
    println!("deletion check (top-k beats random-k): {deletion_wins}/{n}");
    Ok(())
}
