//! Class balancing by augmentation upsampling.

use super::{class_histogram, ReferralDecision, Provenance, WoundCase};
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::rng::case_stream;
use crate::vision::augment::{augment_image, AugmentKind, ALL_AUGMENT_KINDS};
use rand::Rng;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Produces one augmented descendant of a parent case.
pub trait BalanceAugmentor {
    fn augment(&mut self, parent: &WoundCase, new_id: &str, seed: u64) -> Result<WoundCase>;
}

/// Standard augmentor: applies one randomly chosen image policy and writes
/// the result to disk, optionally paraphrasing the note offline.
///
/// Parent images are resolved against `read_root`; augmented images land in
/// `write_dir`. The emitted `image_path` is either relative (when the write
/// directory sits inside the dataset root) or absolute (cross-validation
/// folds, which write under the run's output directory).
pub struct ImageCaseAugmentor<'a> {
    read_root: PathBuf,
    write_dir: PathBuf,
    emitted_prefix: Option<String>,
    pub policies: Vec<AugmentKind>,
    pub text_client: Option<&'a super::TextAugmentClient>,
    cache: BTreeMap<String, ImageSample>,
}

impl<'a> ImageCaseAugmentor<'a> {
    /// Write `<dataset_root>/<subdir>/*.ppm` and emit relative paths.
    pub fn inside_dataset(dataset_root: &Path, subdir: &str) -> Result<Self> {
        let write_dir = dataset_root.join(subdir);
        fs::create_dir_all(&write_dir)
            .map_err(|e| Error::io(write_dir.display().to_string(), e))?;
        Ok(ImageCaseAugmentor {
            read_root: dataset_root.to_path_buf(),
            write_dir,
            emitted_prefix: Some(subdir.trim_end_matches('/').to_string()),
            policies: ALL_AUGMENT_KINDS.to_vec(),
            text_client: None,
            cache: BTreeMap::new(),
        })
    }

    /// Write into an arbitrary directory and emit absolute paths.
    pub fn detached(read_root: &Path, write_dir: &Path) -> Result<Self> {
        fs::create_dir_all(write_dir)
            .map_err(|e| Error::io(write_dir.display().to_string(), e))?;
        let canonical = write_dir
            .canonicalize()
            .map_err(|e| Error::io(write_dir.display().to_string(), e))?;
        Ok(ImageCaseAugmentor {
            read_root: read_root.to_path_buf(),
            write_dir: canonical,
            emitted_prefix: None,
            policies: ALL_AUGMENT_KINDS.to_vec(),
            text_client: None,
            cache: BTreeMap::new(),
        })
    }

    pub fn with_policies(mut self, policies: Vec<AugmentKind>) -> Self {
        if !policies.is_empty() {
            self.policies = policies;
        }
        self
    }

    pub fn with_text_client(mut self, client: &'a super::TextAugmentClient) -> Self {
        self.text_client = Some(client);
        self
    }
}

impl BalanceAugmentor for ImageCaseAugmentor<'_> {
    fn augment(&mut self, parent: &WoundCase, new_id: &str, seed: u64) -> Result<WoundCase> {
        let img = match self.cache.get(&parent.image_path) {
            Some(img) => img.clone(),
            None => {
                let img = ImageSample::read(&self.read_root.join(&parent.image_path))?;
                self.cache.insert(parent.image_path.clone(), img.clone());
                img
            }
        };
        let mut rng = crate::rng::from_seed(seed);
        let kind = self.policies[rng.random_range(0..self.policies.len())];
        let aug_seed: u64 = rng.random();
        let out = augment_image(&img, kind, aug_seed)?;
        let file = format!("{new_id}.ppm");
        let full = self.write_dir.join(&file);
        out.write_ppm(&full)?;
        let emitted = match &self.emitted_prefix {
            Some(prefix) => format!("{prefix}/{file}"),
            None => full.to_string_lossy().into_owned(),
        };

        let (note, provenance) = match self.text_client {
            Some(client) => {
                let text_seed: u64 = rng.random();
                match super::augment_text(&parent.note, client, 1, text_seed) {
                    Ok(mut texts) if !texts.is_empty() => (texts.remove(0), Provenance::ImageAug),
                    Ok(_) => (parent.note.clone(), Provenance::ImageAug),
                    Err(e) => {
                        eprintln!("warning: text augmentation skipped for {new_id}: {e}");
                        (parent.note.clone(), Provenance::ImageAug)
                    }
                }
            }
            None => (parent.note.clone(), Provenance::ImageAug),
        };

        Ok(WoundCase {
            case_id: new_id.to_string(),
            image_path: emitted,
            note,
            dec_exp1: parent.dec_exp1,
            dec_exp2: parent.dec_exp2,
            dec_final: parent.dec_final,
            is_synthetic_augment: true,
            provenance,
            parent_case_id: Some(parent.case_id.clone()),
        })
    }
}

/// Upsample each class to its exact target count by augmenting originals in
/// round-robin order. Output is the originals followed by the new augments;
/// per-class counts equal the targets exactly.
pub fn balance_upsample(
    cases: &[WoundCase],
    targets: [usize; 3],
    augmentor: &mut dyn BalanceAugmentor,
    seed: u64,
) -> Result<Vec<WoundCase>> {
    let current = class_histogram(cases);
    for class in 0..3 {
        if targets[class] < current[class] {
            return Err(Error::InvalidArgument(format!(
                "balance target {} for class {} is below current count {}",
                targets[class],
                class + 1,
                current[class]
            )));
        }
    }

    let mut out = cases.to_vec();
    for class in 0..3 {
        let label = ReferralDecision::from_index(class);
        let mut originals: Vec<&WoundCase> = cases
            .iter()
            .filter(|c| c.dec_final == label && !c.is_synthetic_augment)
            .collect();
        originals.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let deficit = targets[class] - current[class];
        if deficit == 0 {
            continue;
        }
        if originals.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cannot upsample class {}: no originals to augment",
                class + 1
            )));
        }
        for i in 0..deficit {
            let parent = originals[i % originals.len()];
            let k = i / originals.len() + 1;
            let new_id = format!("{}-aug{k:03}", parent.case_id);
            let mut stream = case_stream(seed, "balance", &new_id);
            let aug_seed: u64 = stream.random();
            out.push(augmentor.augment(parent, &new_id, aug_seed)?);
        }
    }
    Ok(out)
}

/// Targets that simply lift every class to the largest current count.
pub fn equalized_targets(cases: &[WoundCase]) -> [usize; 3] {
    let h = class_histogram(cases);
    let max = *h.iter().max().unwrap();
    [max; 3]
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Augmentor that fabricates cases without touching the filesystem.
    struct NullAugmentor;
    impl BalanceAugmentor for NullAugmentor {
        fn augment(&mut self, parent: &WoundCase, new_id: &str, _seed: u64) -> Result<WoundCase> {
            let mut c = parent.clone();
            c.case_id = new_id.to_string();
            c.is_synthetic_augment = true;
            c.provenance = Provenance::ImageAug;
            c.parent_case_id = Some(parent.case_id.clone());
            Ok(c)
        }
    }

    fn mk_set(counts: [usize; 3]) -> Vec<WoundCase> {
        let mut cases = Vec::new();
        for (ci, &n) in counts.iter().enumerate() {
            let label = ReferralDecision::from_index(ci);
            for i in 0..n {
                cases.push(WoundCase {
                    case_id: format!("c{ci}-{i:04}"),
                    image_path: format!("images/c{ci}-{i:04}.ppm"),
                    note: "note".into(),
                    dec_exp1: label,
                    dec_exp2: label,
                    dec_final: label,
                    is_synthetic_augment: false,
                    provenance: Provenance::Generator,
                    parent_case_id: None,
                });
            }
        }
        cases
    }

    #[test]
    fn uneven_targets_hit_exactly() {
        let cases = mk_set([26, 40, 139]);
        let out =
            balance_upsample(&cases, [1950, 1850, 2085], &mut NullAugmentor, 9).unwrap();
        assert_eq!(class_histogram(&out), [1950, 1850, 2085]);
    }

    #[test]
    fn target_equal_to_current_is_a_noop() {
        let cases = mk_set([4, 5, 6]);
        let out = balance_upsample(&cases, [4, 5, 6], &mut NullAugmentor, 0).unwrap();
        assert_eq!(out.len(), 15);
        assert!(out.iter().all(|c| !c.is_synthetic_augment));
    }

    #[test]
    fn round_robin_spawns_evenly() {
        // toy 3/4/14 -> 30/30/30: every class-1 original spawns exactly 9
        let cases = mk_set([3, 4, 14]);
        let out = balance_upsample(&cases, [30, 30, 30], &mut NullAugmentor, 1).unwrap();
        assert_eq!(class_histogram(&out), [30, 30, 30]);
        for parent in ["c0-0000", "c0-0001", "c0-0002"] {
            let spawned = out
                .iter()
                .filter(|c| c.parent_case_id.as_deref() == Some(parent))
                .count();
            assert_eq!(spawned, 9, "{parent}");
        }
    }

    #[test]
    fn target_below_current_errors() {
        let cases = mk_set([4, 5, 6]);
        assert!(balance_upsample(&cases, [3, 5, 6], &mut NullAugmentor, 0).is_err());
    }

    #[test]
    fn unreachable_remote_text_endpoint_keeps_notes_and_continues() {
        let base = std::env::temp_dir().join(format!("dmwat-bal-remote-{}", std::process::id()));
        let _ = fs::remove_dir_all(&base);
        let data_dir = base.join("data");
        fs::create_dir_all(data_dir.join("images")).unwrap();
        let img = ImageSample::filled(16, 16, 0.4);
        let cases = mk_set([1, 1, 1]);
        for c in &cases {
            img.write_ppm(&data_dir.join(&c.image_path)).unwrap();
        }
        let dead = crate::data::TextAugmentClient::Remote {
            url: "http://127.0.0.1:1/never".into(),
            token: None,
            timeout: std::time::Duration::from_millis(100),
        };
        let mut augmentor = ImageCaseAugmentor::detached(&data_dir, &base.join("aug"))
            .unwrap()
            .with_text_client(&dead);
        // augmentation proceeds; the failed paraphrase is skipped and the
        // parent note carries over unchanged
        let out = balance_upsample(&cases, [2, 1, 1], &mut augmentor, 3).unwrap();
        let aug = out.iter().find(|c| c.is_synthetic_augment).unwrap();
        assert_eq!(aug.note, cases[0].note);
        fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn detached_augmentor_writes_images_and_absolute_paths() {
        let base = std::env::temp_dir().join(format!("dmwat-bal-{}", std::process::id()));
        let _ = fs::remove_dir_all(&base);
        let data_dir = base.join("data");
        let aug_dir = base.join("out/aug");
        fs::create_dir_all(data_dir.join("images")).unwrap();
        let img = ImageSample::filled(16, 16, 0.4);
        let cases = mk_set([1, 1, 1]);
        for c in &cases {
            img.write_ppm(&data_dir.join(&c.image_path)).unwrap();
        }
        let mut augmentor = ImageCaseAugmentor::detached(&data_dir, &aug_dir).unwrap();
        let out = balance_upsample(&cases, [2, 1, 1], &mut augmentor, 3).unwrap();
        let aug = out.iter().find(|c| c.is_synthetic_augment).unwrap();
        assert!(Path::new(&aug.image_path).is_absolute());
        // joining an absolute path against any root resolves to it unchanged
        assert!(data_dir.join(&aug.image_path).exists());
        fs::remove_dir_all(&base).ok();
    }
}
