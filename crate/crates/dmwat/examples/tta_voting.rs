//! Test-time augmentation with majority voting: predictions over flipped,
//! rotated and brightness-shifted views, compared against single-view
//! accuracy on a held-out split.
//!
//! Run: cargo run --release -p dmwat --example tta_voting

use dmwat::data::{generate_synthetic_dataset, stratified_kfold, GeneratorSpec};
use dmwat::eval::tta_majority_vote;
use dmwat::image::ImageSample;
use dmwat::pipeline::{train_pipeline, PipelineTrainConfig};
use dmwat::text::TextEncoderConfig;
use dmwat::vision::VitConfig;
use std::path::Path;

fn main() -> dmwat::Result<()> {
    let out = Path::new("target/example-runs/tta_voting");
    std::fs::remove_dir_all(out).ok();
    let (cases, _) = generate_synthetic_dataset(&GeneratorSpec::sized(150, 29), out)?;
    let folds = stratified_kfold(&cases, 5, 29)?;
    let (train, test) = folds.split(&cases, 0)?;
    let train: Vec<_> = train.into_iter().cloned().collect();

    let cfg = PipelineTrainConfig {
        vit: VitConfig {
            embed_dim: 32,
            num_layers: 2,
            ..VitConfig::default()
        },
        text: TextEncoderConfig {
            embed_dim: 32,
            max_len: 20,
            ..TextEncoderConfig::default()
        },
        ..PipelineTrainConfig::default()
    };
    let model = train_pipeline(&train, out, &cfg, 29)?;

    let mut single = 0;
    let mut voted = 0;
    for (i, case) in test.iter().enumerate() {
        let img = ImageSample::read(&out.join(&case.image_path))?;
        let note = model.prepare_note(&case.note);
        let plain = model.predict(&img, &note)?.0;
        let (majority, votes) = tta_majority_vote(&img, &note, &model, 8, 1000 + i as u64)?;
        single += usize::from(plain == case.dec_final);
        voted += usize::from(majority == case.dec_final);
        if plain != majority {
            println!(
                "{}: single {} vs voted {} (votes {:?})",
                case.case_id,
                plain.ordinal(),
                majority.ordinal(),
                votes.iter().map(|v| v.ordinal()).collect::<Vec<_>>()
            );
        }
    }
    println!(
        "single-view accuracy {}/{}  |  8-view majority accuracy {}/{}",
        single,
        test.len(),
        voted,
        test.len()
    );
    Ok(())
}
