//! Seeded synthetic wound-case generator.
//!
//! Each case gets a class-conditional rendered image (elliptical lesion) and
//! a templated clinical note. The label rule is cross-modal by construction:
//! the image carries a binary visual-severity signal, the note a binary
//! textual-severity signal, and the final label is `1 + visual + textual`.
//! Either signal alone pins the label only about 70% of the time (class 2
//! splits evenly between the two single-signal patterns); together they
//! determine it exactly. That gap is the fusion-superiority testbed.

use super::{ReferralDecision, Provenance, WoundCase};
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::rng::case_stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageGenParams {
    pub size: usize,
    /// Benign lesion radius range (pixels).
    pub benign_radius: (f64, f64),
    /// Severe lesion radius range (pixels).
    pub severe_radius: (f64, f64),
    /// Severe border wobble amplitude (fraction of radius).
    pub border_irregularity: f64,
}

impl Default for ImageGenParams {
    fn default() -> Self {
        ImageGenParams {
            size: 32,
            benign_radius: (3.0, 5.5),
            severe_radius: (9.0, 13.0),
            border_irregularity: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    /// Target number of cases per final-label class.
    pub counts: [usize; 3],
    pub image: ImageGenParams,
    /// Probability that the two experts disagree on a case (the reconciled
    /// label stays as planned; one expert reads one level less urgent).
    pub disagreement_rate: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 0,
            counts: [22, 16, 22],
            image: ImageGenParams::default(),
            disagreement_rate: 0.05,
        }
    }
}

impl GeneratorSpec {
    /// Default spec scaled to roughly `total` cases, preserving the
    /// 11:8:11 class ratio.
    pub fn sized(total: usize, seed: u64) -> Self {
        let unit = total as f64 / 30.0;
        let c1 = (11.0 * unit).round() as usize;
        let c2 = (8.0 * unit).round() as usize;
        let c3 = total.saturating_sub(c1 + c2);
        GeneratorSpec {
            seed,
            counts: [c1.max(1), c2.max(1), c3.max(1)],
            ..GeneratorSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.iter().all(|&c| c == 0) {
            return Err(Error::Config("generator: all class counts are zero".into()));
        }
        if !(0.0..=1.0).contains(&self.disagreement_rate) {
            return Err(Error::Config("generator: disagreement rate outside [0,1]".into()));
        }
        if self.image.size < 16 || self.image.size % 8 != 0 {
            return Err(Error::Config(
                "generator: image size must be >= 16 and divisible by 8".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned lesion ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LesionEllipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl LesionEllipse {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        let dy = (r as f64 - self.cy) / self.ry;
        let dx = (c as f64 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

/// Ground-truth metadata for one generated case; persisted alongside the
/// dataset so interpretability oracles can locate the lesion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedCaseInfo {
    pub case_id: String,
    pub label: ReferralDecision,
    pub visual_severity: u8,
    pub text_severity: u8,
    pub lesion: LesionEllipse,
}

/// Generate cases, write `images/*.ppm`, `dataset.jsonl` and
/// `gen_meta.jsonl` under `out_dir`, and return everything in memory too.
pub fn generate_synthetic_dataset(
    spec: &GeneratorSpec,
    out_dir: &Path,
) -> Result<(Vec<WoundCase>, Vec<GeneratedCaseInfo>)> {
    spec.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)
        .map_err(|e| Error::io(images_dir.display().to_string(), e))?;

    // deterministic class order: cycle 1,2,3 while quotas remain
    let mut remaining = spec.counts;
    let mut labels = Vec::new();
    while remaining.iter().any(|&r| r > 0) {
        for class in 0..3 {
            if remaining[class] > 0 {
                remaining[class] -= 1;
                labels.push(ReferralDecision::from_index(class));
            }
        }
    }

    let mut cases = Vec::with_capacity(labels.len());
    let mut infos = Vec::with_capacity(labels.len());
    let mut class2_parity = 0u8;

    for (idx, &label) in labels.iter().enumerate() {
        let case_id = format!("case-{idx:05}");
        let mut rng = case_stream(spec.seed, "gen", &case_id);

        // cross-modal split of the severity signal
        let (visual, textual) = match label {
            ReferralDecision::Continue => (0u8, 0u8),
            ReferralDecision::UrgentChange => (1, 1),
            ReferralDecision::NonUrgentChange => {
                class2_parity ^= 1;
                if class2_parity == 1 {
                    (1, 0)
                } else {
                    (0, 1)
                }
            }
        };

        let (img, lesion) = render_wound_image(&spec.image, visual, &mut rng);
        let note = render_note(textual, &mut rng);

        // expert pair: reconciled label is planned; disagreement (where
        // possible) makes one expert one level less urgent
        let can_disagree = label != ReferralDecision::Continue;
        let disagree = can_disagree && rng.random_bool(spec.disagreement_rate);
        let (dec_exp1, dec_exp2) = if disagree {
            let lower = ReferralDecision::from_ordinal(label.ordinal() - 1).unwrap();
            if rng.random_bool(0.5) {
                (label, lower)
            } else {
                (lower, label)
            }
        } else {
            (label, label)
        };

        let image_rel = format!("images/{case_id}.ppm");
        img.write_ppm(&out_dir.join(&image_rel))?;

        cases.push(WoundCase {
            case_id: case_id.clone(),
            image_path: image_rel,
            note,
            dec_exp1,
            dec_exp2,
            dec_final: super::reconcile_labels(dec_exp1, dec_exp2),
            is_synthetic_augment: false,
            provenance: Provenance::Generator,
            parent_case_id: None,
        });
        infos.push(GeneratedCaseInfo {
            case_id,
            label,
            visual_severity: visual,
            text_severity: textual,
            lesion,
        });
    }

    super::save_dataset(&out_dir.join("dataset.jsonl"), &cases)?;
    let meta_path = out_dir.join("gen_meta.jsonl");
    let mut f = fs::File::create(&meta_path)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    for info in &infos {
        let mut line = serde_json::to_string(info)?;
        line.push('\n');
        f.write_all(line.as_bytes())
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    }
    Ok((cases, infos))
}

pub fn load_gen_meta(path: &Path) -> Result<Vec<GeneratedCaseInfo>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn render_wound_image(
    params: &ImageGenParams,
    severity: u8,
    rng: &mut impl Rng,
) -> (ImageSample, LesionEllipse) {
    let n = params.size;
    let mut img = ImageSample::filled(n, n, 0.0);

    // skin background with mild noise and a soft vertical shading gradient
    let skin = [0.82, 0.62, 0.52];
    for r in 0..n {
        for c in 0..n {
            let shade = 1.0 - 0.06 * (r as f64 / n as f64);
            for ch in 0..3 {
                let noise: f64 = rng.random_range(-0.03..0.03);
                img.set(r, c, ch, (skin[ch] * shade + noise).clamp(0.0, 1.0));
            }
        }
    }

    let (rmin, rmax) = if severity == 1 {
        params.severe_radius
    } else {
        params.benign_radius
    };
    let ry = rng.random_range(rmin..rmax);
    let rx = rng.random_range(rmin..rmax);
    let margin = rmax.ceil() + 1.0;
    let cy = rng.random_range(margin..(n as f64 - margin));
    let cx = rng.random_range(margin..(n as f64 - margin));
    let lesion = LesionEllipse { cy, cx, ry, rx };

    let wobble_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    for r in 0..n {
        for c in 0..n {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            let theta = dy.atan2(dx);
            let boundary = if severity == 1 {
                1.0 + params.border_irregularity * (5.0 * theta + wobble_phase).sin()
            } else {
                1.0
            };
            let d = ((dy / ry).powi(2) + (dx / rx).powi(2)).sqrt();
            if d <= boundary {
                let color = if severity == 1 {
                    // necrotic mixture: yellow and near-black patches
                    if rng.random_bool(0.5) {
                        [0.78, 0.72, 0.18]
                    } else {
                        [0.14, 0.10, 0.08]
                    }
                } else {
                    // small pink granulating lesion
                    [0.86, 0.44, 0.50]
                };
                let jitter: f64 = rng.random_range(-0.04..0.04);
                for ch in 0..3 {
                    img.set(r, c, ch, (color[ch] + jitter).clamp(0.0, 1.0));
                }
            }
        }
    }
    (img, lesion)
}

/// Class-bearing keywords the text-severity signal rides on. Offline text
/// augmentation must preserve every one of these.
pub const SEVERE_KEYWORDS: [&str; 5] = ["odor", "purulent", "necrotic", "worsening", "erythema"];
pub const BENIGN_KEYWORDS: [&str; 5] = ["granulating", "healing", "clean", "dry", "improving"];

const LOCATIONS: [&str; 6] = ["heel", "ankle", "shin", "calf", "forearm", "hip"];

/// Note templates per text severity; `{loc}` is the location slot.
pub fn default_note_templates(severity: u8) -> Vec<&'static str> {
    if severity == 1 {
        vec![
            "wound on {loc} with purulent drainage and foul odor , margins worsening",
            "necrotic tissue noted at {loc} site , purulent exudate present",
            "{loc} wound shows spreading erythema and strong odor , condition worsening",
            "thick purulent discharge from {loc} ulcer , surrounding erythema noted",
            "patient reports pain , {loc} wound necrotic with foul odor",
        ]
    } else {
        vec![
            "wound on {loc} granulating well , dressing dry and intact",
            "{loc} site clean , healing edges , no concerns today",
            "granulating tissue at {loc} , wound bed clean and improving",
            "{loc} wound dry , steadily healing , dressing changed",
            "stable {loc} site , clean base , healing as expected",
        ]
    }
}

fn render_note(severity: u8, rng: &mut impl Rng) -> String {
    let templates = default_note_templates(severity);
    let t = templates[rng.random_range(0..templates.len())];
    let loc = LOCATIONS[rng.random_range(0..LOCATIONS.len())];
    t.replace("{loc}", loc)
}

/// Image-only severity summary: fraction of pixels that stray far from the
/// local skin estimate, i.e. an area proxy for the lesion. Used by probe
/// oracles, never by the pipeline itself.
pub fn image_severity_feature(img: &ImageSample) -> f64 {
    // skin estimate from the one-pixel border ring
    let (h, w) = (img.height(), img.width());
    let mut skin = [0.0f64; 3];
    let mut count = 0.0;
    for r in 0..h {
        for c in 0..w {
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                for ch in 0..3 {
                    skin[ch] += img.get(r, c, ch);
                }
                count += 1.0;
            }
        }
    }
    for ch in &mut skin {
        *ch /= count;
    }
    let mut lesionish = 0usize;
    for r in 0..h {
        for c in 0..w {
            let dist: f64 = (0..3).map(|ch| (img.get(r, c, ch) - skin[ch]).abs()).sum();
            if dist > 0.45 {
                lesionish += 1;
            }
        }
    }
    lesionish as f64 / (h * w) as f64
}
