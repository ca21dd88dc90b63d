//! Score-CAM saliency adapted to the ViT: each embedding channel of a chosen
//! block's patch states is one activation map on the patch grid. Channel
//! importance is the target-class softmax gain its normalized, upsampled map
//! produces when used to mask the input, measured against the blank
//! (dataset-mean) baseline.

use crate::error::{Error, Result};
use crate::image::{bilinear_resize_grid, ImageSample};
use crate::vision::VisionClassifier;
use serde::Serialize;

/// Activation maps of one block: channel `k`'s map is the k-th column of the
/// patch states reshaped onto the (H/p, W/p) grid.
pub struct ActivationMapSet {
    pub layer: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// maps[k] is a grid_h*grid_w raster.
    pub maps: Vec<Vec<f64>>,
}

impl ActivationMapSet {
    pub fn from_states(
        states: &crate::tensor::Tensor,
        layer: usize,
        grid_h: usize,
        grid_w: usize,
    ) -> Result<Self> {
        // states rows: [class, distill, patches...]
        let n_patches = grid_h * grid_w;
        if states.rows() != n_patches + 2 {
            return Err(Error::ShapeMismatch {
                op: "activation_maps",
                detail: format!("{} rows for {} patches", states.rows(), n_patches),
            });
        }
        let channels = states.cols();
        let mut maps = vec![vec![0.0; n_patches]; channels];
        for p in 0..n_patches {
            let row = states.row_slice(p + 2);
            for (k, map) in maps.iter_mut().enumerate() {
                map[p] = row[k];
            }
        }
        Ok(ActivationMapSet {
            layer,
            grid_h,
            grid_w,
            maps,
        })
    }

    pub fn channels(&self) -> usize {
        self.maps.len()
    }
}

/// Saliency raster in `[0,1]`, max entry 1 unless identically zero.
#[derive(Debug, Clone, Serialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub target_class: usize,
    /// (channel, alpha) weights actually used.
    pub channel_weights: Vec<(usize, f64)>,
}

impl SaliencyMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreCamConfig {
    /// Block whose patch states supply the activation maps. Defaults to the
    /// first block, where patch locality is strongest.
    pub layer: Option<usize>,
    /// Keep the top-N channels by activation variance; `None` keeps all.
    pub channel_subset: Option<usize>,
}

impl Default for ScoreCamConfig {
    fn default() -> Self {
        ScoreCamConfig {
            layer: Some(0),
            channel_subset: Some(64),
        }
    }
}

pub fn score_cam(
    img: &ImageSample,
    model: &VisionClassifier,
    target_class: usize,
    cfg: &ScoreCamConfig,
) -> Result<SaliencyMap> {
    if target_class >= 3 {
        return Err(Error::InvalidArgument(format!(
            "target class index {target_class} out of range"
        )));
    }
    let (_, states) = model.encoder.encode_with_states(img)?;
    let layer = cfg.layer.unwrap_or(0);
    let block = states.get(layer).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "layer {layer} out of range for {}-block encoder",
            states.len()
        ))
    })?;
    let (grid_h, grid_w) = model.encoder.patch_grid();
    let maps = ActivationMapSet::from_states(block, layer, grid_h, grid_w)?;

    // channel subset by activation variance
    let mut order: Vec<usize> = (0..maps.channels()).collect();
    if let Some(n) = cfg.channel_subset {
        let variance = |m: &[f64]| {
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m.len() as f64
        };
        order.sort_by(|&a, &b| variance(&maps.maps[b]).total_cmp(&variance(&maps.maps[a])));
        order.truncate(n.max(1));
        order.sort_unstable();
    }

    let (h, w) = (img.height(), img.width());
    let mean = model.encoder.pixel_mean;
    let blank = blank_image(h, w, mean);
    let baseline = model.predict_probs(&blank)?[target_class];

    // channel weights: softmax gain of the map-masked input over the blank
    let mut weights = Vec::with_capacity(order.len());
    for &k in &order {
        let map = &maps.maps[k];
        let (lo, hi) = min_max(map);
        let upsampled = if hi > lo {
            let normalized: Vec<f64> = map.iter().map(|v| (v - lo) / (hi - lo)).collect();
            bilinear_resize_grid(&normalized, grid_h, grid_w, h, w)
        } else {
            vec![0.0; h * w]
        };
        let mut masked = img.clone();
        for r in 0..h {
            for c in 0..w {
                let m = upsampled[r * w + c];
                for ch in 0..3 {
                    masked.set(r, c, ch, img.get(r, c, ch) * m);
                }
            }
        }
        let prob = model.predict_probs(&masked)?[target_class];
        weights.push((k, prob - baseline));
    }

    // ReLU(sum_k alpha_k A^k) on the patch grid, upsample, max-normalize
    let mut combined = vec![0.0; grid_h * grid_w];
    for &(k, alpha) in &weights {
        for (acc, v) in combined.iter_mut().zip(&maps.maps[k]) {
            *acc += alpha * v;
        }
    }
    for v in &mut combined {
        *v = v.max(0.0);
    }
    let mut data = bilinear_resize_grid(&combined, grid_h, grid_w, h, w);
    for v in &mut data {
        *v = v.max(0.0);
    }
    let peak = data.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut data {
            *v /= peak;
        }
    }
    Ok(SaliencyMap {
        height: h,
        width: w,
        data,
        target_class,
        channel_weights: weights,
    })
}

pub(crate) fn blank_image(h: usize, w: usize, mean: [f64; 3]) -> ImageSample {
    let mut img = ImageSample::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                img.set(r, c, ch, mean[ch]);
            }
        }
    }
    img
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::vision::{VisionEncoder, VitConfig};

    fn toy_model(seed: u64) -> VisionClassifier {
        let mut rng = substream(seed, "sc");
        let enc = VisionEncoder::new(
            VitConfig {
                embed_dim: 16,
                num_layers: 2,
                num_heads: 2,
                ..VitConfig::default()
            },
            (32, 32),
            &mut rng,
        )
        .unwrap();
        VisionClassifier::new(enc, &mut rng)
    }

    fn noisy_image(seed: u64) -> ImageSample {
        use rand::Rng;
        let mut rng = substream(seed, "img");
        let mut img = ImageSample::filled(32, 32, 0.5);
        for r in 0..32 {
            for c in 0..32 {
                for ch in 0..3 {
                    img.set(r, c, ch, rng.random_range(0.0..1.0));
                }
            }
        }
        img
    }

    #[test]
    fn saliency_is_non_negative_and_normalized() {
        let model = toy_model(1);
        let img = noisy_image(2);
        let map = score_cam(&img, &model, 2, &ScoreCamConfig::default()).unwrap();
        assert!(map.data.iter().all(|&v| v >= 0.0));
        let peak = map.data.iter().cloned().fold(0.0, f64::max);
        assert!(peak == 0.0 || (peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_model_yields_zero_map() {
        // a head with zero weights scores every input identically, so every
        // channel's confidence delta collapses to zero
        let mut model = toy_model(3);
        for i in 0..model.head.len() {
            let id = crate::tensor::ParamId(i);
            for v in model.head.value_mut(id).data_mut() {
                *v = 0.0;
            }
        }
        let img = noisy_image(4);
        let map = score_cam(&img, &model, 0, &ScoreCamConfig::default()).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0));
        assert!(map.channel_weights.iter().all(|&(_, a)| a == 0.0));
    }

    #[test]
    fn invalid_layer_errors() {
        let model = toy_model(5);
        let img = noisy_image(6);
        let cfg = ScoreCamConfig {
            layer: Some(99),
            channel_subset: None,
        };
        assert!(score_cam(&img, &model, 0, &cfg).is_err());
    }

    #[test]
    fn explanations_are_pure_functions() {
        let model = toy_model(7);
        let img = noisy_image(8);
        let a = score_cam(&img, &model, 1, &ScoreCamConfig::default()).unwrap();
        let b = score_cam(&img, &model, 1, &ScoreCamConfig::default()).unwrap();
        assert_eq!(a.data, b.data);
    }
}
