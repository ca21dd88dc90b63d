//! Cross-validated comparison of image-only, text-only and fused conditions
//! under both heads, printed as a mean +/- std table.
//!
//! Run: cargo run --release -p dmwat --example evaluate_cv
//! (about 1-2 minutes on a laptop CPU)

use dmwat::cli::gen_data;
use dmwat::eval::{cross_validate, persist_report, RunConfig};
use std::path::Path;

fn main() -> dmwat::Result<()> {
    let out = Path::new("target/example-runs/evaluate_cv");
    std::fs::remove_dir_all(out).ok();
    std::fs::create_dir_all(out).ok();
    gen_data(&out.join("data"), 300, 17)?;

    let mut cfg = RunConfig::example();
    cfg.seed = 17;
    cfg.dataset = out.join("data/dataset.jsonl");
    cfg.out_dir = out.join("run");
    cfg.epochs.vision = 4;
    cfg.epochs.text = 4;
    cfg.text.max_len = 20;

    let report = cross_validate(&cfg)?;
    persist_report(&report, &cfg.out_dir)?;
    print!("{}", report.render_table());
    println!(
        "full metrics at {}",
        cfg.out_dir.join("metrics.json").display()
    );
    Ok(())
}
