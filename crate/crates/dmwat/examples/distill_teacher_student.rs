//! Knowledge distillation end to end: train the small conv teacher, then a
//! DeiT-style student against the combined label/teacher objective, and show
//! the loss breakdown at a few alpha values.
//!
//! Run: cargo run --release -p dmwat --example distill_teacher_student

use dmwat::data::{generate_synthetic_dataset, GeneratorSpec};
use dmwat::image::ImageSample;
use dmwat::vision::{
    distillation_loss, train_teacher, train_vision_classifier, Teacher, VisionTrainConfig,
    VitConfig,
};
use std::path::Path;

fn main() -> dmwat::Result<()> {
    let out = Path::new("target/example-runs/distill_teacher_student");
    std::fs::remove_dir_all(out).ok();
    let (cases, _) = generate_synthetic_dataset(&GeneratorSpec::sized(90, 5), out)?;
    let images: Vec<ImageSample> = cases
        .iter()
        .map(|c| ImageSample::read(&out.join(&c.image_path)))
        .collect::<dmwat::Result<_>>()?;

    let teacher_samples: Vec<_> = images.iter().zip(cases.iter().map(|c| c.dec_final)).collect();
    let teacher = train_teacher(&teacher_samples, 4, 3e-3, 1)?;
    let teacher_acc = teacher_samples
        .iter()
        .filter(|(img, label)| {
            let z = teacher.logits(img).unwrap();
            (0..3).max_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap() == label.index()
        })
        .count();
    println!("teacher train accuracy: {}/{}", teacher_acc, cases.len());

    let vit = VitConfig {
        embed_dim: 32,
        num_layers: 2,
        ..VitConfig::default()
    };
    let student_samples: Vec<_> = images
        .iter()
        .zip(cases.iter().map(|c| c.dec_final.one_hot()))
        .collect();
    let (student, stats) = train_vision_classifier(
        &student_samples,
        &teacher,
        vit.clone(),
        &VisionTrainConfig {
            epochs: 8,
            learning_rate: 2e-3,
            ..VisionTrainConfig::default()
        },
        2,
    )?;
    println!(
        "student distillation loss per epoch: {:?}",
        stats
            .epoch_losses
            .iter()
            .map(|l| (l * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );

    // loss breakdown on one sample across the alpha sweep; soft mode keeps
    // the two components visibly distinct
    let logits = student.logits(&images[0])?;
    let teacher_logits = teacher.logits(&images[0])?;
    for alpha in [0.0, 0.5, 1.0] {
        let cfg = VitConfig {
            distillation_alpha: alpha,
            distillation_mode: dmwat::vision::DistillationMode::Soft,
            ..vit.clone()
        };
        let b = distillation_loss(logits, teacher_logits, cases[0].dec_final, &cfg)?;
        println!(
            "alpha {alpha:.1}: ce {:.4}, kd {:.4}, total {:.4}",
            b.ce, b.kd, b.total
        );
    }
    Ok(())
}
