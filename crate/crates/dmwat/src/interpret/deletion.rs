//! Deletion metric: masking the most-salient pixels should hurt the target
//! confidence more than masking an equally large random set.

use super::score_cam::SaliencyMap;
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::rng::from_seed;
use crate::vision::VisionClassifier;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy)]
pub struct DeletionDrops {
    /// Confidence drop after masking the top-`fraction` salient pixels.
    pub top_k: f64,
    /// Drop after masking an equally large seeded-random pixel set.
    pub random_k: f64,
}

pub fn deletion_check(
    img: &ImageSample,
    map: &SaliencyMap,
    model: &VisionClassifier,
    fraction: f64,
    seed: u64,
) -> Result<DeletionDrops> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "deletion fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if map.height != img.height() || map.width != img.width() {
        return Err(Error::ShapeMismatch {
            op: "deletion_check",
            detail: "saliency map does not match image dimensions".into(),
        });
    }
    let n = img.height() * img.width();
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let target = map.target_class;
    let base = model.predict_probs(img)?[target];
    let mean = model.encoder.pixel_mean;

    // top-k by saliency, stable order on ties
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| map.data[b].total_cmp(&map.data[a]).then(a.cmp(&b)));
    let top: Vec<usize> = order[..k].to_vec();

    let mut rng = from_seed(seed);
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng);
    let random: Vec<usize> = all[..k].to_vec();

    let masked = |pixels: &[usize]| -> Result<f64> {
        let mut out = img.clone();
        for &p in pixels {
            let (r, c) = (p / img.width(), p % img.width());
            for ch in 0..3 {
                out.set(r, c, ch, mean[ch]);
            }
        }
        Ok(model.predict_probs(&out)?[target])
    };

    Ok(DeletionDrops {
        top_k: base - masked(&top)?,
        random_k: base - masked(&random)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpret::score_cam::{score_cam, ScoreCamConfig};
    use crate::rng::substream;
    use crate::vision::{VisionEncoder, VitConfig};

    fn toy_model(seed: u64) -> VisionClassifier {
        let mut rng = substream(seed, "del");
        let enc = VisionEncoder::new(
            VitConfig {
                embed_dim: 16,
                num_layers: 1,
                num_heads: 2,
                ..VitConfig::default()
            },
            (32, 32),
            &mut rng,
        )
        .unwrap();
        VisionClassifier::new(enc, &mut rng)
    }

    #[test]
    fn full_masking_gives_identical_drops() {
        let model = toy_model(0);
        let img = ImageSample::filled(32, 32, 0.4);
        let map = score_cam(&img, &model, 0, &ScoreCamConfig::default()).unwrap();
        let drops = deletion_check(&img, &map, &model, 1.0, 7).unwrap();
        assert!((drops.top_k - drops.random_k).abs() < 1e-12);
    }

    #[test]
    fn vanishing_fraction_gives_vanishing_drops() {
        let model = toy_model(1);
        let img = ImageSample::filled(32, 32, 0.6);
        let map = score_cam(&img, &model, 1, &ScoreCamConfig::default()).unwrap();
        // fraction -> 0 means masking a single pixel of 1024
        let drops = deletion_check(&img, &map, &model, 1.0 / 1024.0, 3).unwrap();
        assert!(drops.top_k.abs() < 0.05);
        assert!(drops.random_k.abs() < 0.05);
    }

    #[test]
    fn out_of_range_fraction_errors() {
        let model = toy_model(2);
        let img = ImageSample::filled(32, 32, 0.5);
        let map = score_cam(&img, &model, 0, &ScoreCamConfig::default()).unwrap();
        assert!(deletion_check(&img, &map, &model, 0.0, 0).is_err());
        assert!(deletion_check(&img, &map, &model, 1.5, 0).is_err());
    }
}
