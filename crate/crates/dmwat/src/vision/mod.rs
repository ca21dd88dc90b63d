//! Toy DeiT-style vision transformer with class and distillation tokens.

pub mod augment;
mod distill;
mod teacher;
mod train;

pub use distill::{distillation_loss, distillation_loss_vars, DistillationMode, LossBreakdown, Teacher};
pub use teacher::{train_teacher, ConvTeacher};
pub use train::{train_vision_classifier, VisionTrainConfig, VisionTrainStats};

use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::tensor::{Binding, ParamId, ParamSet, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub distillation_alpha: f64,
    pub distillation_mode: DistillationMode,
    pub soft_temperature: f64,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            patch_size: 8,
            embed_dim: 64,
            num_layers: 4,
            num_heads: 4,
            distillation_alpha: 0.5,
            distillation_mode: DistillationMode::Hard,
            soft_temperature: 3.0,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.embed_dim == 0 || self.num_layers == 0 || self.num_heads == 0
        {
            return Err(Error::Config("vit: all dimensions must be positive".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "vit: embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.distillation_alpha) {
            return Err(Error::Config(format!(
                "vit: distillation_alpha must lie in [0,1], got {}",
                self.distillation_alpha
            )));
        }
        if self.soft_temperature <= 0.0 {
            return Err(Error::Config("vit: soft_temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn seq_len(&self, img: &ImageSample) -> Result<usize> {
        let p = self.patch_size;
        if img.height() % p != 0 || img.width() % p != 0 {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} not divisible by patch size {}",
                img.height(),
                img.width(),
                p
            )));
        }
        Ok((img.height() / p) * (img.width() / p) + 2)
    }
}

/// Encoder output for one image.
#[derive(Debug, Clone)]
pub struct VitOutput {
    pub class_embedding: Vec<f64>,
    pub distill_embedding: Vec<f64>,
    /// Final patch states, one row per patch on the (H/p)*(W/p) grid.
    pub patch_states: Tensor,
}

impl VitOutput {
    /// Embedding handed to fusion: the mean of class and distillation tokens.
    pub fn fusion_embedding(&self) -> Vec<f64> {
        self.class_embedding
            .iter()
            .zip(&self.distill_embedding)
            .map(|(c, d)| 0.5 * (c + d))
            .collect()
    }
}

struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct VitIds {
    patch_w: ParamId,
    patch_b: ParamId,
    cls_tok: ParamId,
    dist_tok: ParamId,
    pos: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

/// MLP expansion factor inside each block, fixed at desk scale.
const MLP_RATIO: usize = 2;

pub struct VisionEncoder {
    pub cfg: VitConfig,
    pub image_hw: (usize, usize),
    pub params: ParamSet,
    ids: VitIds,
    /// Dataset mean per channel; the "blank" baseline for interpretability.
    pub pixel_mean: [f64; 3],
}

/// Tape-level outputs of one encoder forward pass.
pub struct VitVars {
    pub class_state: Var,
    pub distill_state: Var,
    pub patch_states: Var,
    /// Full sequence output of every block, in layer order.
    pub layer_states: Vec<Var>,
}

impl VisionEncoder {
    pub fn new(cfg: VitConfig, image_hw: (usize, usize), rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = image_hw;
        let p = cfg.patch_size;
        if h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!(
                "vit: image {h}x{w} not divisible by patch size {p}"
            )));
        }
        let d = cfg.embed_dim;
        let n_patches = (h / p) * (w / p);
        let seq = n_patches + 2;
        let patch_dim = 3 * p * p;

        let mut params = ParamSet::new();
        let patch_w = params.add("patch.w", init(&[patch_dim, d], rng));
        let patch_b = params.add("patch.b", Tensor::zeros(&[1, d]));
        let cls_tok = params.add("token.class", Tensor::rand_uniform(&[1, d], 0.02, rng));
        let dist_tok = params.add("token.distill", Tensor::rand_uniform(&[1, d], 0.02, rng));
        let pos = params.add("pos", Tensor::rand_uniform(&[seq, d], 0.02, rng));
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let pfx = format!("layer{l}");
            layers.push(LayerIds {
                ln1_g: params.add(format!("{pfx}.ln1.g"), ones(&[1, d])),
                ln1_b: params.add(format!("{pfx}.ln1.b"), Tensor::zeros(&[1, d])),
                wq: params.add(format!("{pfx}.attn.wq"), init(&[d, d], rng)),
                wk: params.add(format!("{pfx}.attn.wk"), init(&[d, d], rng)),
                wv: params.add(format!("{pfx}.attn.wv"), init(&[d, d], rng)),
                wo: params.add(format!("{pfx}.attn.wo"), init(&[d, d], rng)),
                bo: params.add(format!("{pfx}.attn.bo"), Tensor::zeros(&[1, d])),
                ln2_g: params.add(format!("{pfx}.ln2.g"), ones(&[1, d])),
                ln2_b: params.add(format!("{pfx}.ln2.b"), Tensor::zeros(&[1, d])),
                w1: params.add(format!("{pfx}.mlp.w1"), init(&[d, MLP_RATIO * d], rng)),
                b1: params.add(format!("{pfx}.mlp.b1"), Tensor::zeros(&[1, MLP_RATIO * d])),
                w2: params.add(format!("{pfx}.mlp.w2"), init(&[MLP_RATIO * d, d], rng)),
                b2: params.add(format!("{pfx}.mlp.b2"), Tensor::zeros(&[1, d])),
            });
        }
        let lnf_g = params.add("lnf.g", ones(&[1, d]));
        let lnf_b = params.add("lnf.b", Tensor::zeros(&[1, d]));

        Ok(VisionEncoder {
            cfg,
            image_hw,
            params,
            ids: VitIds {
                patch_w,
                patch_b,
                cls_tok,
                dist_tok,
                pos,
                layers,
                lnf_g,
                lnf_b,
            },
            pixel_mean: [0.5; 3],
        })
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (
            self.image_hw.0 / self.cfg.patch_size,
            self.image_hw.1 / self.cfg.patch_size,
        )
    }

    /// Embed image patches into the token sequence: learned class and
    /// distillation tokens at positions 0 and 1, a linear patch projection
    /// behind them, learned position embeddings added to everything.
    pub fn patch_embed_vars(&self, tape: &mut Tape, b: &Binding, img: &ImageSample) -> Result<Var> {
        self.check_image(img)?;
        let patches = tape.constant(image_to_patches(img, self.cfg.patch_size));
        let proj = tape.matmul(patches, b.var(self.ids.patch_w))?;
        let proj = tape.add(proj, b.var(self.ids.patch_b))?;
        let toks = tape.concat_rows(b.var(self.ids.cls_tok), b.var(self.ids.dist_tok))?;
        let seq = tape.concat_rows(toks, proj)?;
        tape.add(seq, b.var(self.ids.pos))
    }

    /// Value-level patch embedding, for inspection and tests.
    pub fn patch_embed(&self, img: &ImageSample) -> Result<Tensor> {
        let mut tape = Tape::new();
        let binding = self.params.bind_frozen(&mut tape);
        let v = self.patch_embed_vars(&mut tape, &binding, img)?;
        Ok(tape.value(v).clone())
    }

    pub fn forward_vars(&self, tape: &mut Tape, b: &Binding, img: &ImageSample) -> Result<VitVars> {
        let mut x = self.patch_embed_vars(tape, b, img)?;
        let d = self.cfg.embed_dim;
        let dh = d / self.cfg.num_heads;
        let mut layer_states = Vec::with_capacity(self.cfg.num_layers);

        for layer in &self.ids.layers {
            let normed = affine_layernorm(tape, x, b.var(layer.ln1_g), b.var(layer.ln1_b))?;
            let q = tape.matmul(normed, b.var(layer.wq))?;
            let k = tape.matmul(normed, b.var(layer.wk))?;
            let v = tape.matmul(normed, b.var(layer.wv))?;
            let mut heads: Option<Var> = None;
            for h in 0..self.cfg.num_heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi)?;
                let kh = tape.slice_cols(k, lo, hi)?;
                let vh = tape.slice_cols(v, lo, hi)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
                let weights = tape.softmax_rows(scaled)?;
                let oh = tape.matmul(weights, vh)?;
                heads = Some(match heads {
                    None => oh,
                    Some(acc) => tape.concat_cols(acc, oh)?,
                });
            }
            let concat = heads.expect("at least one head");
            let proj = tape.matmul(concat, b.var(layer.wo))?;
            let proj = tape.add(proj, b.var(layer.bo))?;
            x = tape.add(x, proj)?;

            let normed2 = affine_layernorm(tape, x, b.var(layer.ln2_g), b.var(layer.ln2_b))?;
            let h1 = tape.matmul(normed2, b.var(layer.w1))?;
            let h1 = tape.add(h1, b.var(layer.b1))?;
            let act = tape.gelu(h1)?;
            let h2 = tape.matmul(act, b.var(layer.w2))?;
            let h2 = tape.add(h2, b.var(layer.b2))?;
            x = tape.add(x, h2)?;
            layer_states.push(x);
        }

        let xf = affine_layernorm(tape, x, b.var(self.ids.lnf_g), b.var(self.ids.lnf_b))?;
        let seq = tape.value(xf).rows();
        Ok(VitVars {
            class_state: tape.slice_rows(xf, 0, 1)?,
            distill_state: tape.slice_rows(xf, 1, 2)?,
            patch_states: tape.slice_rows(xf, 2, seq)?,
            layer_states,
        })
    }

    /// Deterministic inference pass.
    pub fn encode_image(&self, img: &ImageSample) -> Result<VitOutput> {
        let (out, _) = self.encode_with_states(img)?;
        Ok(out)
    }

    /// Inference pass that also returns every block's full sequence output,
    /// which is what Score-CAM reads its activation maps from.
    pub fn encode_with_states(&self, img: &ImageSample) -> Result<(VitOutput, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let binding = self.params.bind_frozen(&mut tape);
        let vars = self.forward_vars(&mut tape, &binding, img)?;
        let out = VitOutput {
            class_embedding: tape.value(vars.class_state).data().to_vec(),
            distill_embedding: tape.value(vars.distill_state).data().to_vec(),
            patch_states: tape.value(vars.patch_states).clone(),
        };
        let states = vars
            .layer_states
            .iter()
            .map(|&v| tape.value(v).clone())
            .collect();
        Ok((out, states))
    }

    fn check_image(&self, img: &ImageSample) -> Result<()> {
        if (img.height(), img.width()) != self.image_hw {
            return Err(Error::InvalidArgument(format!(
                "encoder built for {}x{} images, got {}x{}",
                self.image_hw.0,
                self.image_hw.1,
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// Zero all position embeddings (test hook for equivariance checks).
    pub fn zero_positions(&mut self) {
        for v in self.params.value_mut(self.ids.pos).data_mut() {
            *v = 0.0;
        }
    }
}

fn ones(shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    Tensor::new(shape, vec![1.0; numel]).expect("static shape")
}

/// Fan-in scaled uniform init.
pub(crate) fn init(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let fan_in = shape[0] as f64;
    Tensor::rand_uniform(shape, (1.0 / fan_in).sqrt(), rng)
}

pub(crate) fn affine_layernorm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = tape.layernorm_rows(x)?;
    let scaled = tape.mul(n, gain)?;
    tape.add(scaled, bias)
}

/// Flatten an image into one row per patch: pixels of each patch in row-major
/// order with interleaved channels, patches in grid row-major order.
pub fn image_to_patches(img: &ImageSample, p: usize) -> Tensor {
    let (gh, gw) = (img.height() / p, img.width() / p);
    let mut data = Vec::with_capacity(gh * gw * p * p * 3);
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..3 {
                        data.push(img.get(py * p + dy, px * p + dx, ch));
                    }
                }
            }
        }
    }
    Tensor::new(&[gh * gw, 3 * p * p], data).expect("patch arithmetic")
}

/// Vision encoder plus the 3-way head it was trained with. The pipeline uses
/// the encoder embeddings; interpretability reads the head's class scores.
pub struct VisionClassifier {
    pub encoder: VisionEncoder,
    pub head: ParamSet,
    head_w: ParamId,
    head_b: ParamId,
}

impl VisionClassifier {
    pub fn new(encoder: VisionEncoder, rng: &mut impl Rng) -> Self {
        let d = encoder.cfg.embed_dim;
        let mut head = ParamSet::new();
        let head_w = head.add("head.w", Tensor::rand_uniform(&[d, 3], (1.0 / d as f64).sqrt(), rng));
        let head_b = head.add("head.b", Tensor::zeros(&[1, 3]));
        VisionClassifier {
            encoder,
            head,
            head_w,
            head_b,
        }
    }

    /// Student logits on the tape: head applied to the mean of class and
    /// distillation states.
    pub fn logits_vars(
        &self,
        tape: &mut Tape,
        enc_b: &Binding,
        head_b: &Binding,
        img: &ImageSample,
    ) -> Result<Var> {
        let vars = self.encoder.forward_vars(tape, enc_b, img)?;
        let sum = tape.add(vars.class_state, vars.distill_state)?;
        let emb = tape.scale(sum, 0.5)?;
        let z = tape.matmul(emb, head_b.var(self.head_w))?;
        tape.add(z, head_b.var(self.head_b))
    }

    pub fn logits(&self, img: &ImageSample) -> Result<[f64; 3]> {
        let mut tape = Tape::new();
        let enc_b = self.encoder.params.bind_frozen(&mut tape);
        let head_b = self.head.bind_frozen(&mut tape);
        let z = self.logits_vars(&mut tape, &enc_b, &head_b, img)?;
        let d = tape.value(z).data();
        Ok([d[0], d[1], d[2]])
    }

    pub fn predict_probs(&self, img: &ImageSample) -> Result<[f64; 3]> {
        let z = self.logits(img)?;
        Ok(softmax3(z))
    }
}

pub fn softmax3(z: [f64; 3]) -> [f64; 3] {
    let mx = z[0].max(z[1]).max(z[2]);
    let e = [(z[0] - mx).exp(), (z[1] - mx).exp(), (z[2] - mx).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn toy_config() -> VitConfig {
        VitConfig {
            patch_size: 8,
            embed_dim: 32,
            num_layers: 2,
            num_heads: 4,
            ..VitConfig::default()
        }
    }

    fn random_image(hw: (usize, usize), seed: u64) -> ImageSample {
        let mut rng = substream(seed, "img");
        let mut img = ImageSample::filled(hw.0, hw.1, 0.0);
        for r in 0..hw.0 {
            for c in 0..hw.1 {
                for ch in 0..3 {
                    img.set(r, c, ch, rng.random_range(0.0..1.0));
                }
            }
        }
        img
    }

    #[test]
    fn sequence_length_law() {
        let mut rng = substream(0, "init");
        let enc = VisionEncoder::new(toy_config(), (32, 32), &mut rng).unwrap();
        let img = random_image((32, 32), 1);
        let seq = enc.patch_embed(&img).unwrap();
        assert_eq!(seq.shape(), &[18, 32]); // 16 patches + 2 tokens

        let cfg16 = VitConfig {
            patch_size: 16,
            ..toy_config()
        };
        let enc16 = VisionEncoder::new(cfg16, (16, 16), &mut rng).unwrap();
        let img16 = random_image((16, 16), 2);
        assert_eq!(enc16.patch_embed(&img16).unwrap().shape(), &[3, 32]);
    }

    #[test]
    fn non_divisible_image_errors() {
        let mut rng = substream(0, "init");
        let enc = VisionEncoder::new(toy_config(), (32, 32), &mut rng).unwrap();
        let img = random_image((24, 32), 1);
        assert!(enc.patch_embed(&img).is_err());
    }

    #[test]
    fn zero_image_patch_tokens_are_bias_plus_positions() {
        let mut rng = substream(3, "init");
        let enc = VisionEncoder::new(toy_config(), (32, 32), &mut rng).unwrap();
        let img = ImageSample::filled(32, 32, 0.0);
        let seq = enc.patch_embed(&img).unwrap();
        let bias = enc.params.value(enc.ids.patch_b);
        let pos = enc.params.value(enc.ids.pos);
        for patch in 0..16 {
            let row = seq.row_slice(patch + 2);
            for j in 0..32 {
                let expect = bias.data()[j] + pos.row_slice(patch + 2)[j];
                assert!((row[j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let mut rng = substream(4, "init");
        let enc = VisionEncoder::new(toy_config(), (32, 32), &mut rng).unwrap();
        let img = random_image((32, 32), 9);
        let a = enc.encode_image(&img).unwrap();
        let b = enc.encode_image(&img).unwrap();
        assert_eq!(a.class_embedding, b.class_embedding);
        assert_eq!(a.distill_embedding, b.distill_embedding);
        assert_eq!(a.patch_states, b.patch_states);
    }

    #[test]
    fn class_embedding_norm_is_finite_positive() {
        let mut rng = substream(5, "init");
        let enc = VisionEncoder::new(toy_config(), (32, 32), &mut rng).unwrap();
        let img = random_image((32, 32), 11);
        let out = enc.encode_image(&img).unwrap();
        let norm: f64 = out.class_embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm.is_finite() && norm > 0.0);
    }

    #[test]
    fn patch_permutation_equivariance_without_positions() {
        let mut rng = substream(6, "init");
        let mut enc = VisionEncoder::new(toy_config(), (32, 32), &mut rng).unwrap();
        enc.zero_positions();
        let img = random_image((32, 32), 13);

        // swap two whole patches (grid cells 0 and 5) in pixel space
        let mut swapped = img.clone();
        let p = 8;
        let (ar, ac) = (0, 0);
        let (br, bc) = (1, 1); // grid cell index 5 on the 4x4 grid
        for dy in 0..p {
            for dx in 0..p {
                for chn in 0..3 {
                    let a = img.get(ar * p + dy, ac * p + dx, chn);
                    let b = img.get(br * p + dy, bc * p + dx, chn);
                    swapped.set(ar * p + dy, ac * p + dx, chn, b);
                    swapped.set(br * p + dy, bc * p + dx, chn, a);
                }
            }
        }

        let out_a = enc.encode_image(&img).unwrap();
        let out_b = enc.encode_image(&swapped).unwrap();
        let close = |x: &[f64], y: &[f64]| {
            x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12)
        };
        assert!(close(&out_a.class_embedding, &out_b.class_embedding));
        // patch rows 0 and 5 swap, the rest stay put
        for i in 0..16 {
            let j = match i {
                0 => 5,
                5 => 0,
                other => other,
            };
            assert!(
                close(out_a.patch_states.row_slice(i), out_b.patch_states.row_slice(j)),
                "patch {i}"
            );
        }
    }
}
