//! Apply every image augmentation policy, plus Mixup and CutMix, to one
//! generated wound image and write the results side by side.
//!
//! Run: cargo run --release -p dmwat --example augment_gallery

use dmwat::data::{generate_synthetic_dataset, GeneratorSpec};
use dmwat::image::ImageSample;
use dmwat::rng::from_seed;
use dmwat::vision::augment::{augment_image, cutmix, mixup, one_hot, ALL_AUGMENT_KINDS};
use std::path::Path;

fn main() -> dmwat::Result<()> {
    let out = Path::new("target/example-runs/augment_gallery");
    std::fs::remove_dir_all(out).ok();
    let (cases, _) = generate_synthetic_dataset(&GeneratorSpec::sized(6, 3), out)?;

    let a = ImageSample::read(&out.join(&cases[2].image_path))?;
    let b = ImageSample::read(&out.join(&cases[5].image_path))?;
    a.write_ppm(&out.join("original.ppm"))?;

    for kind in ALL_AUGMENT_KINDS {
        let img = augment_image(&a, kind, 99)?;
        let name = format!("{}.ppm", serde_name(kind));
        img.write_ppm(&out.join(&name))?;
        println!("wrote {name}");
    }

    let mut rng = from_seed(7);
    let (mixed, soft) = mixup(
        (&a, one_hot(cases[2].dec_final)),
        (&b, one_hot(cases[5].dec_final)),
        None,
        &mut rng,
    )?;
    mixed.write_ppm(&out.join("mixup.ppm"))?;
    println!("mixup soft label: [{:.3}, {:.3}, {:.3}]", soft[0], soft[1], soft[2]);

    let (cut, soft, rect) = cutmix(
        (&a, one_hot(cases[2].dec_final)),
        (&b, one_hot(cases[5].dec_final)),
        11,
    )?;
    cut.write_ppm(&out.join("cutmix.ppm"))?;
    println!(
        "cutmix pasted {}x{} at ({}, {}); soft label: [{:.3}, {:.3}, {:.3}]",
        rect.2, rect.3, rect.0, rect.1, soft[0], soft[1], soft[2]
    );
    println!("gallery written under {}", out.display());
    Ok(())
}

fn serde_name(kind: dmwat::vision::augment::AugmentKind) -> String {
    serde_json::to_string(&kind).unwrap().trim_matches('"').to_string()
}
