//! Image augmentation algebra: classic geometric/photometric ops plus the
//! Mixup/CutMix/random-erasing regularizers. Every op preserves image
//! dimensions and the `[0,1]` pixel range, and is deterministic given a seed.

use crate::data::ReferralDecision;
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::rng::from_seed;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

/// Probability weights over the three referral classes.
pub type SoftLabel = [f64; 3];

pub fn mix_labels(a: SoftLabel, b: SoftLabel, lam: f64) -> SoftLabel {
    [
        lam * a[0] + (1.0 - lam) * b[0],
        lam * a[1] + (1.0 - lam) * b[1],
        lam * a[2] + (1.0 - lam) * b[2],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Rotate,
    FlipH,
    FlipV,
    CropResize,
    Brightness,
    RandomErase,
}

pub const ALL_AUGMENT_KINDS: [AugmentKind; 6] = [
    AugmentKind::Rotate,
    AugmentKind::FlipH,
    AugmentKind::FlipV,
    AugmentKind::CropResize,
    AugmentKind::Brightness,
    AugmentKind::RandomErase,
];

/// Label-preserving ops safe for test-time augmentation views.
pub const TTA_AUGMENT_KINDS: [AugmentKind; 4] = [
    AugmentKind::Rotate,
    AugmentKind::FlipH,
    AugmentKind::FlipV,
    AugmentKind::Brightness,
];

/// Apply one augmentation policy with parameters drawn from `seed` within
/// their declared ranges.
pub fn augment_image(img: &ImageSample, kind: AugmentKind, seed: u64) -> Result<ImageSample> {
    let mut rng = from_seed(seed);
    match kind {
        AugmentKind::Rotate => {
            // quarter turns and small zero-padded angles are equally likely
            if rng.random_bool(0.5) && img.height() == img.width() {
                let turns = rng.random_range(1..4);
                rotate_quarter(img, turns)
            } else {
                let degrees = rng.random_range(-15.0..15.0);
                rotate_small(img, degrees)
            }
        }
        AugmentKind::FlipH => Ok(flip_h(img)),
        AugmentKind::FlipV => Ok(flip_v(img)),
        AugmentKind::CropResize => {
            let area = rng.random_range(0.6..1.0);
            crop_resize(img, area, &mut rng)
        }
        AugmentKind::Brightness => {
            let factor = rng.random_range(0.7..1.3);
            brightness(img, factor)
        }
        AugmentKind::RandomErase => {
            let frac = rng.random_range(0.02..0.2);
            random_erase(img, frac, &mut rng)
        }
    }
}

/// Quarter-turn rotation. One turn maps pixel (r,c) to (c, H-1-r); square
/// images only, so dimensions are preserved.
pub fn rotate_quarter(img: &ImageSample, turns: u32) -> Result<ImageSample> {
    if img.height() != img.width() {
        return Err(Error::InvalidArgument(
            "quarter-turn rotation requires a square image".into(),
        ));
    }
    let mut out = img.clone();
    for _ in 0..turns % 4 {
        let src = out.clone();
        let h = src.height();
        for r in 0..h {
            for c in 0..h {
                for ch in 0..3 {
                    out.set(c, h - 1 - r, ch, src.get(r, c, ch));
                }
            }
        }
    }
    Ok(out)
}

/// Small-angle rotation about the center, zero-padded outside the frame.
pub fn rotate_small(img: &ImageSample, degrees: f64) -> Result<ImageSample> {
    if !(-45.0..=45.0).contains(&degrees) {
        return Err(Error::InvalidArgument(format!(
            "small-angle rotation limited to +/-45 degrees, got {degrees}"
        )));
    }
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = ImageSample::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let sr = cy + dy * cos - dx * sin;
            let sc = cx + dy * sin + dx * cos;
            for ch in 0..3 {
                out.set(r, c, ch, img.sample_bilinear(sr, sc, ch).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

pub fn flip_h(img: &ImageSample) -> ImageSample {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                out.set(r, c, ch, img.get(r, w - 1 - c, ch));
            }
        }
    }
    out
}

pub fn flip_v(img: &ImageSample) -> ImageSample {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                out.set(r, c, ch, img.get(h - 1 - r, c, ch));
            }
        }
    }
    out
}

/// Random crop retaining `area_frac` of the image, resampled back to the
/// original size with bilinear interpolation.
pub fn crop_resize(img: &ImageSample, area_frac: f64, rng: &mut impl Rng) -> Result<ImageSample> {
    if !(0.6..=1.0).contains(&area_frac) {
        return Err(Error::InvalidArgument(format!(
            "crop must retain at least 60% area, got {area_frac}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let scale = area_frac.sqrt();
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let r0 = rng.random_range(0..=h - ch);
    let c0 = rng.random_range(0..=w - cw);
    let mut out = ImageSample::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let sr = r0 as f64 + (r as f64 + 0.5) * ch as f64 / h as f64 - 0.5;
            let sc = c0 as f64 + (c as f64 + 0.5) * cw as f64 / w as f64 - 0.5;
            for chan in 0..3 {
                out.set(
                    r,
                    c,
                    chan,
                    img.sample_bilinear(sr.clamp(0.0, (h - 1) as f64), sc.clamp(0.0, (w - 1) as f64), chan),
                );
            }
        }
    }
    Ok(out)
}

pub fn brightness(img: &ImageSample, factor: f64) -> Result<ImageSample> {
    if !(0.7..=1.3).contains(&factor) {
        return Err(Error::InvalidArgument(format!(
            "brightness factor must lie in [0.7, 1.3], got {factor}"
        )));
    }
    let mut out = img.clone();
    for r in 0..img.height() {
        for c in 0..img.width() {
            for ch in 0..3 {
                out.set(r, c, ch, (img.get(r, c, ch) * factor).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Erase a rectangle covering as close to `area_frac` of the image as integer
/// side lengths allow, filled with per-pixel uniform noise.
pub fn random_erase(img: &ImageSample, area_frac: f64, rng: &mut impl Rng) -> Result<ImageSample> {
    if !(0.02..=0.2).contains(&area_frac) {
        return Err(Error::InvalidArgument(format!(
            "erase area must lie in [0.02, 0.2], got {area_frac}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let target = (area_frac * (h * w) as f64).round() as usize;
    let target = target.max(1);

    // all side pairs whose area is nearest the target
    let mut best_err = usize::MAX;
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for rh in 1..=h {
        let rw = ((target as f64 / rh as f64).round() as usize).clamp(1, w);
        let err = (rh * rw).abs_diff(target);
        if err < best_err {
            best_err = err;
            candidates.clear();
        }
        if err == best_err {
            candidates.push((rh, rw));
        }
    }
    let (rh, rw) = candidates[rng.random_range(0..candidates.len())];
    let r0 = rng.random_range(0..=h - rh);
    let c0 = rng.random_range(0..=w - rw);

    let mut out = img.clone();
    for r in r0..r0 + rh {
        for c in c0..c0 + rw {
            for ch in 0..3 {
                out.set(r, c, ch, rng.random_range(0.0..1.0));
            }
        }
    }
    Ok(out)
}

/// Mixup: convex pixel and label combination. `lambda` defaults to a
/// Beta(0.8, 0.8) draw.
pub fn mixup(
    a: (&ImageSample, SoftLabel),
    b: (&ImageSample, SoftLabel),
    lambda: Option<f64>,
    rng: &mut impl Rng,
) -> Result<(ImageSample, SoftLabel)> {
    let (img_a, lab_a) = a;
    let (img_b, lab_b) = b;
    if img_a.height() != img_b.height() || img_a.width() != img_b.width() {
        return Err(Error::InvalidArgument(
            "mixup requires images of identical dimensions".into(),
        ));
    }
    let lam = match lambda {
        Some(l) if (0.0..=1.0).contains(&l) => l,
        Some(l) => {
            return Err(Error::InvalidArgument(format!(
                "mixup lambda must lie in [0,1], got {l}"
            )))
        }
        None => Beta::new(0.8, 0.8)
            .expect("valid beta parameters")
            .sample(rng),
    };
    let pixels = img_a
        .pixels()
        .iter()
        .zip(img_b.pixels())
        .map(|(x, y)| lam * x + (1.0 - lam) * y)
        .collect();
    let img = ImageSample::new(img_a.height(), img_a.width(), pixels)?;
    Ok((img, mix_labels(lab_a, lab_b, lam)))
}

/// Mixed image, its soft label, and the pasted rectangle (r0, c0, h, w).
pub type CutMixOutput = (ImageSample, SoftLabel, (usize, usize, usize, usize));

/// CutMix: paste a random rectangle of `b` into `a`. The label weight of `b`
/// equals pasted area over total area exactly.
pub fn cutmix(
    a: (&ImageSample, SoftLabel),
    b: (&ImageSample, SoftLabel),
    seed: u64,
) -> Result<CutMixOutput> {
    let (img_a, lab_a) = a;
    let (img_b, lab_b) = b;
    if img_a.height() != img_b.height() || img_a.width() != img_b.width() {
        return Err(Error::InvalidArgument(
            "cutmix requires images of identical dimensions".into(),
        ));
    }
    let mut rng = from_seed(seed);
    let (h, w) = (img_a.height(), img_a.width());
    let rh = rng.random_range(1..=h);
    let rw = rng.random_range(1..=w);
    let r0 = rng.random_range(0..=h - rh);
    let c0 = rng.random_range(0..=w - rw);

    let mut out = img_a.clone();
    for r in r0..r0 + rh {
        for c in c0..c0 + rw {
            for ch in 0..3 {
                out.set(r, c, ch, img_b.get(r, c, ch));
            }
        }
    }
    let weight_b = (rh * rw) as f64 / (h * w) as f64;
    let label = mix_labels(lab_a, lab_b, 1.0 - weight_b);
    Ok((out, label, (r0, c0, rh, rw)))
}

pub fn one_hot(d: ReferralDecision) -> SoftLabel {
    d.one_hot()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn gradient_image(h: usize, w: usize) -> ImageSample {
        let mut img = ImageSample::filled(h, w, 0.0);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    img.set(r, c, ch, ((r * w + c + ch) % 97) as f64 / 96.0);
                }
            }
        }
        img
    }

    #[test]
    fn flip_h_is_involution() {
        let img = gradient_image(8, 8);
        assert_eq!(flip_h(&flip_h(&img)), img);
    }

    #[test]
    fn rotate90_index_law() {
        let img = gradient_image(6, 6);
        let rot = rotate_quarter(&img, 1).unwrap();
        let h = img.height();
        for r in 0..h {
            for c in 0..h {
                assert_eq!(rot.get(c, h - 1 - r, 0), img.get(r, c, 0));
            }
        }
    }

    #[test]
    fn rotate_quarter_four_times_is_identity() {
        let img = gradient_image(5, 5);
        assert_eq!(rotate_quarter(&img, 4).unwrap(), img);
    }

    #[test]
    fn random_erase_ten_percent_on_32x32_erases_102_or_103_pixels() {
        let img = ImageSample::filled(32, 32, 0.5);
        for seed in 0..20 {
            let mut rng = from_seed(seed);
            let erased = random_erase(&img, 0.1, &mut rng).unwrap();
            let modified = (0..32 * 32)
                .filter(|i| {
                    (0..3).any(|ch| erased.pixels()[i * 3 + ch] != img.pixels()[i * 3 + ch])
                })
                .count();
            assert!(
                (102..=103).contains(&modified),
                "seed {seed}: {modified} pixels modified"
            );
        }
    }

    #[test]
    fn mixup_endpoint_lambda_one_returns_a() {
        let a = gradient_image(4, 4);
        let b = ImageSample::filled(4, 4, 1.0);
        let mut rng = from_seed(0);
        let (img, label) = mixup(
            (&a, [1.0, 0.0, 0.0]),
            (&b, [0.0, 0.0, 1.0]),
            Some(1.0),
            &mut rng,
        )
        .unwrap();
        assert_eq!(img, a);
        assert_eq!(label, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn mixup_half_mixes_labels_one_and_three() {
        let a = ImageSample::filled(4, 4, 0.0);
        let b = ImageSample::filled(4, 4, 1.0);
        let mut rng = from_seed(0);
        let (_, label) = mixup(
            (&a, one_hot(ReferralDecision::Continue)),
            (&b, one_hot(ReferralDecision::UrgentChange)),
            Some(0.5),
            &mut rng,
        )
        .unwrap();
        assert_eq!(label, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn mixup_quarter_on_constant_images() {
        let a = ImageSample::filled(4, 4, 0.0);
        let b = ImageSample::filled(4, 4, 1.0);
        let mut rng = from_seed(0);
        let (img, _) = mixup(
            (&a, [1.0, 0.0, 0.0]),
            (&b, [0.0, 1.0, 0.0]),
            Some(0.25),
            &mut rng,
        )
        .unwrap();
        for &v in img.pixels() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn cutmix_weight_matches_pixel_count_oracle() {
        let a = ImageSample::filled(32, 32, 0.25);
        let b = ImageSample::filled(32, 32, 0.75);
        for seed in 0..10 {
            let (img, label, _) = cutmix(
                (&a, [1.0, 0.0, 0.0]),
                (&b, [0.0, 0.0, 1.0]),
                seed,
            )
            .unwrap();
            let pasted = img.pixels().iter().filter(|&&v| v == 0.75).count() / 3;
            let weight_b = pasted as f64 / 1024.0;
            assert!((label[2] - weight_b).abs() < 1e-12, "seed {seed}");
            assert!((label.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_preserves_dims_and_range() {
        let img = gradient_image(16, 16);
        for kind in ALL_AUGMENT_KINDS {
            for seed in 0..5 {
                let out = augment_image(&img, kind, seed).unwrap();
                assert_eq!(out.height(), 16);
                assert_eq!(out.width(), 16);
                assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn augment_is_deterministic_given_seed() {
        let img = gradient_image(16, 16);
        for kind in ALL_AUGMENT_KINDS {
            let a = augment_image(&img, kind, 1234).unwrap();
            let b = augment_image(&img, kind, 1234).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn out_of_range_parameters_error() {
        let img = gradient_image(8, 8);
        let mut rng = from_seed(0);
        assert!(brightness(&img, 1.5).is_err());
        assert!(crop_resize(&img, 0.4, &mut rng).is_err());
        assert!(random_erase(&img, 0.5, &mut rng).is_err());
        assert!(rotate_small(&img, 80.0).is_err());
    }
}
