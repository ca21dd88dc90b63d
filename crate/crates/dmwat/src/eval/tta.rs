//! Test-time augmentation with majority voting.

use crate::data::ReferralDecision;
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::pipeline::PipelineModel;
use crate::rng::from_seed;
use crate::text::ClinicalNote;
use crate::vision::augment::{brightness, flip_h, flip_v, rotate_small};
use rand::Rng;

/// One label-preserving view for voting: flips, small rotations, brightness.
fn sample_view(img: &ImageSample, rng: &mut impl Rng) -> Result<ImageSample> {
    match rng.random_range(0..4) {
        0 => Ok(flip_h(img)),
        1 => Ok(flip_v(img)),
        2 => rotate_small(img, rng.random_range(-10.0..10.0)),
        _ => brightness(img, rng.random_range(0.85..1.15)),
    }
}

/// Predict on the original plus `n_views - 1` augmented views and take the
/// plurality decision; vote ties go to the more urgent class. With
/// `n_views == 1` this is extensionally plain prediction.
pub fn tta_majority_vote(
    img: &ImageSample,
    note: &ClinicalNote,
    model: &PipelineModel,
    n_views: usize,
    seed: u64,
) -> Result<(ReferralDecision, Vec<ReferralDecision>)> {
    if n_views < 1 {
        return Err(Error::InvalidArgument("tta needs at least one view".into()));
    }
    let mut votes = Vec::with_capacity(n_views);
    votes.push(model.predict(img, note)?.0);
    let mut rng = from_seed(seed);
    for _ in 1..n_views {
        let view = sample_view(img, &mut rng)?;
        votes.push(model.predict(&view, note)?.0);
    }
    Ok((plurality_urgent(&votes), votes))
}

/// Plurality with ties broken toward the higher ordinal.
pub fn plurality_urgent(votes: &[ReferralDecision]) -> ReferralDecision {
    let mut counts = [0usize; 3];
    for v in votes {
        counts[v.index()] += 1;
    }
    let mut best = 0;
    for c in 1..3 {
        if counts[c] >= counts[best] {
            best = c;
        }
    }
    ReferralDecision::from_index(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ReferralDecision::*;

    #[test]
    fn plurality_simple_majority() {
        assert_eq!(plurality_urgent(&[UrgentChange, UrgentChange, Continue]), UrgentChange);
    }

    #[test]
    fn plurality_tie_goes_urgent() {
        // votes {1,1,2,2} -> 2
        assert_eq!(
            plurality_urgent(&[Continue, Continue, NonUrgentChange, NonUrgentChange]),
            NonUrgentChange
        );
        assert_eq!(
            plurality_urgent(&[UrgentChange, Continue, Continue, UrgentChange]),
            UrgentChange
        );
    }
}
