//! Post-hoc explanations: Score-CAM saliency over the vision encoder,
//! Integrated Gradients attribution over the text encoder, and a
//! deletion-metric faithfulness check.

mod deletion;
mod ig;
mod report;
mod score_cam;

pub use deletion::{deletion_check, DeletionDrops};
pub use ig::{ig_attribute, integrated_gradients, AttributionReport};
pub use report::{attribution_html, write_attribution_report, write_saliency_maps};
pub use score_cam::{score_cam, ActivationMapSet, SaliencyMap, ScoreCamConfig};
