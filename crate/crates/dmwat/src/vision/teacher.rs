//! Small two-conv-layer teacher, trained first and then frozen for
//! distillation. Convolutions use stride = kernel (non-overlapping windows),
//! which keeps them expressible as gather + reshape + matmul on the tape.

use super::distill::Teacher;
use crate::data::ReferralDecision;
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::rng::substream;
use crate::tensor::{Binding, Optimizer, ParamId, ParamSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;

pub struct ConvTeacher {
    image_hw: (usize, usize),
    win1: usize,
    c1: usize,
    win2: usize,
    params: ParamSet,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    wh: ParamId,
    bh: ParamId,
}

impl ConvTeacher {
    pub fn new(image_hw: (usize, usize), rng: &mut impl rand::Rng) -> Result<Self> {
        let (h, w) = image_hw;
        let (win1, c1, win2, c2) = (8, 24, 2, 32);
        if h % win1 != 0 || w % win1 != 0 || (h / win1) % win2 != 0 || (w / win1) % win2 != 0 {
            return Err(Error::Config(format!(
                "teacher windows do not tile a {h}x{w} image"
            )));
        }
        let mut params = ParamSet::new();
        let w1 = params.add("conv1.w", super::init(&[win1 * win1 * 3, c1], rng));
        let b1 = params.add("conv1.b", Tensor::zeros(&[1, c1]));
        let w2 = params.add("conv2.w", super::init(&[win2 * win2 * c1, c2], rng));
        let b2 = params.add("conv2.b", Tensor::zeros(&[1, c2]));
        let wh = params.add("head.w", super::init(&[c2, 3], rng));
        let bh = params.add("head.b", Tensor::zeros(&[1, 3]));
        Ok(ConvTeacher {
            image_hw,
            win1,
            c1,
            win2,
            params,
            w1,
            b1,
            w2,
            b2,
            wh,
            bh,
        })
    }

    fn forward(&self, tape: &mut Tape, b: &Binding, img: &ImageSample) -> Result<Var> {
        let (h, w) = self.image_hw;
        // image as [H*W, 3] rows
        let img_t = tape.constant(Tensor::new(&[h * w, 3], img.pixels().to_vec())?);

        let ids1 = window_gather_ids(h, w, self.win1);
        let g1 = tape.gather_rows(img_t, &ids1)?;
        let n1 = (h / self.win1) * (w / self.win1);
        let g1 = tape.reshape(g1, &[n1, self.win1 * self.win1 * 3])?;
        let x1 = tape.matmul(g1, b.var(self.w1))?;
        let x1 = tape.add(x1, b.var(self.b1))?;
        let x1 = tape.relu(x1)?;

        let (gh, gw) = (h / self.win1, w / self.win1);
        let ids2 = window_gather_ids(gh, gw, self.win2);
        let g2 = tape.gather_rows(x1, &ids2)?;
        let n2 = (gh / self.win2) * (gw / self.win2);
        let g2 = tape.reshape(g2, &[n2, self.win2 * self.win2 * self.c1])?;
        let x2 = tape.matmul(g2, b.var(self.w2))?;
        let x2 = tape.add(x2, b.var(self.b2))?;
        let x2 = tape.relu(x2)?;

        let pooled = tape.mean_rows(x2)?;
        let z = tape.matmul(pooled, b.var(self.wh))?;
        tape.add(z, b.var(self.bh))
    }
}

impl Teacher for ConvTeacher {
    fn logits(&self, img: &ImageSample) -> Result<[f64; 3]> {
        let mut tape = Tape::new();
        let binding = self.params.bind_frozen(&mut tape);
        let z = self.forward(&mut tape, &binding, img)?;
        let d = tape.value(z).data();
        Ok([d[0], d[1], d[2]])
    }
}

/// Gather row ids turning an `[h*w, c]` grid into stacked non-overlapping
/// `win x win` windows, window-major then pixel row-major.
fn window_gather_ids(h: usize, w: usize, win: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(h * w);
    for wy in 0..h / win {
        for wx in 0..w / win {
            for dy in 0..win {
                for dx in 0..win {
                    ids.push((wy * win + dy) * w + wx * win + dx);
                }
            }
        }
    }
    ids
}

/// Train the teacher with plain cross-entropy, then hand it back frozen.
pub fn train_teacher(
    samples: &[(&ImageSample, ReferralDecision)],
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<ConvTeacher> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("teacher: empty training set".into()));
    }
    let hw = (samples[0].0.height(), samples[0].0.width());
    let mut rng = substream(seed, "teacher-init");
    let mut teacher = ConvTeacher::new(hw, &mut rng)?;
    let mut opt = Optimizer::adaptive(learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = substream(seed, "teacher-order");

    for _ in 0..epochs {
        order.shuffle(&mut shuffle_rng);
        for &i in &order {
            let (img, label) = samples[i];
            let mut tape = Tape::new();
            let binding = teacher.params.bind(&mut tape);
            let z = teacher.forward(&mut tape, &binding, img)?;
            let loss = tape.cross_entropy(z, &Tensor::row(&label.one_hot()))?;
            tape.backward(loss)?;
            binding.harvest(&tape, &mut teacher.params);
            opt.step(&mut teacher.params)?;
        }
    }
    Ok(teacher)
}
