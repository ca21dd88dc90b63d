//! Integrated Gradients token attribution on a trained text classifier,
//! exported as JSON plus a colored HTML report.
//!
//! Run: cargo run --release -p dmwat --example explain_text

use dmwat::data::{generate_synthetic_dataset, GeneratorSpec};
use dmwat::interpret::{integrated_gradients, write_attribution_report};
use dmwat::text::{tokenize, train_text_classifier, TextEncoderConfig, TextTrainConfig, Vocabulary};
use std::path::Path;

fn main() -> dmwat::Result<()> {
    let out = Path::new("target/example-runs/explain_text");
    std::fs::remove_dir_all(out).ok();
    let (cases, _) = generate_synthetic_dataset(&GeneratorSpec::sized(120, 13), out)?;
    let vocab = Vocabulary::build(cases.iter().map(|c| c.note.as_str()));
    let notes: Vec<_> = cases.iter().map(|c| tokenize(&c.note, &vocab, 20)).collect();
    let samples: Vec<_> = notes
        .iter()
        .zip(cases.iter().map(|c| c.dec_final.one_hot()))
        .collect();
    let (model, _) = train_text_classifier(
        &samples,
        vocab.len(),
        TextEncoderConfig {
            embed_dim: 32,
            max_len: 20,
            ..TextEncoderConfig::default()
        },
        &TextTrainConfig::default(),
        13,
    )?;

    // attribute the predicted class of one severe note
    let idx = cases.iter().position(|c| c.note.contains("odor")).unwrap();
    let probs = model.predict_probs(&notes[idx])?;
    let target = (0..3).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
    let report = integrated_gradients(&notes[idx], &model, &vocab, target, 256)?;

    println!("note: {}", cases[idx].note);
    println!("predicted class {} (p = {:.3})", target + 1, probs[target]);
    let mut ranked: Vec<_> = report
        .tokens
        .iter()
        .zip(&report.scores)
        .filter(|(t, _)| *t != "[pad]")
        .collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    for (tok, score) in ranked.iter().take(6) {
        println!("  {tok:<12} {score:+.5}");
    }
    println!(
        "completeness: sum(attr) vs f(x)-f(x') gap = {:.3e}",
        report.completeness_gap
    );

    let (json, html) = write_attribution_report(&report, &out.join("attribution"))?;
    println!("written: {} and {}", json.display(), html.display());
    Ok(())
}
