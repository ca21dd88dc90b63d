//! Stratified k-fold assignment with augment co-location.

use super::{class_histogram, ReferralDecision, WoundCase};
use crate::error::{Error, Result};
use crate::rng::substream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Fold assignment over the original cases of a dataset. Augmented cases are
/// never assigned directly; they resolve to their parent's fold, which is
/// what keeps train/test leakage impossible by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// original case_id -> fold index
    pub folds: BTreeMap<String, usize>,
    /// per-fold class histograms, indexed [fold][class]
    pub histograms: Vec<[usize; 3]>,
}

impl FoldAssignment {
    /// Fold of a case, following one parent link for augments.
    pub fn fold_of(&self, case: &WoundCase) -> Result<usize> {
        self.folds.get(case.root_id()).copied().ok_or_else(|| {
            Error::InvalidData(format!(
                "case {} (root {}) is not covered by the fold assignment",
                case.case_id,
                case.root_id()
            ))
        })
    }

    /// Split `cases` into (train, test) for one fold. Accepts augmented cases
    /// and co-locates them with their parents.
    pub fn split<'a>(
        &self,
        cases: &'a [WoundCase],
        fold: usize,
    ) -> Result<(Vec<&'a WoundCase>, Vec<&'a WoundCase>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for case in cases {
            if self.fold_of(case)? == fold {
                test.push(case);
            } else {
                train.push(case);
            }
        }
        Ok((train, test))
    }
}

/// Deterministic stratified k-fold over original cases: per class, shuffled
/// members are dealt round-robin starting at a seeded offset, so per-fold
/// class counts differ from the ideal proportional count by at most 1.
pub fn stratified_kfold(cases: &[WoundCase], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    let originals: Vec<&WoundCase> = cases.iter().filter(|c| !c.is_synthetic_augment).collect();
    let hist = class_histogram(&originals.iter().map(|c| (*c).clone()).collect::<Vec<_>>());
    for (idx, &count) in hist.iter().enumerate() {
        if count < k {
            return Err(Error::InvalidArgument(format!(
                "class {} has {} cases, fewer than k={}",
                idx + 1,
                count,
                k
            )));
        }
    }

    let mut rng = substream(seed, "fold");
    let mut folds = BTreeMap::new();
    let mut histograms = vec![[0usize; 3]; k];

    for class in [
        ReferralDecision::Continue,
        ReferralDecision::NonUrgentChange,
        ReferralDecision::UrgentChange,
    ] {
        let mut ids: Vec<&str> = originals
            .iter()
            .filter(|c| c.dec_final == class)
            .map(|c| c.case_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let start = rand::Rng::random_range(&mut rng, 0..k);
        for (i, id) in ids.iter().enumerate() {
            let fold = (start + i) % k;
            folds.insert((*id).to_string(), fold);
            histograms[fold][class.index()] += 1;
        }
    }

    Ok(FoldAssignment { k, folds, histograms })
}
