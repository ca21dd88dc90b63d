//! One-hidden-layer MLP head trained with cross-entropy on the tensor engine.

use super::HeadModel;
use crate::data::ReferralDecision;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{Optimizer, OptimizerKind, ParamId, ParamSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub struct MlpHead {
    pub params: ParamSet,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl MlpHead {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        let mut params = ParamSet::new();
        // biases start at zero, so a zero input yields uniform class scores
        let w1 = params.add("mlp.w1", crate::vision::init(&[input_dim, hidden], rng));
        let b1 = params.add("mlp.b1", Tensor::zeros(&[1, hidden]));
        let w2 = params.add("mlp.w2", crate::vision::init(&[hidden, 3], rng));
        let b2 = params.add("mlp.b2", Tensor::zeros(&[1, 3]));
        MlpHead {
            params,
            w1,
            b1,
            w2,
            b2,
            input_dim,
            hidden,
        }
    }

    fn logits_vars(
        &self,
        tape: &mut Tape,
        binding: &crate::tensor::Binding,
        x: &[f64],
    ) -> Result<Var> {
        let input = tape.constant(Tensor::row(x));
        let h = tape.matmul(input, binding.var(self.w1))?;
        let h = tape.add(h, binding.var(self.b1))?;
        let h = tape.relu(h)?;
        let z = tape.matmul(h, binding.var(self.w2))?;
        tape.add(z, binding.var(self.b2))
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; 3]> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "mlp_predict",
                detail: format!("feature dim {} vs model {}", x.len(), self.input_dim),
            });
        }
        let mut tape = Tape::new();
        let binding = self.params.bind_frozen(&mut tape);
        let z = self.logits_vars(&mut tape, &binding, x)?;
        let d = tape.value(z).data();
        Ok([d[0], d[1], d[2]])
    }
}

impl HeadModel for MlpHead {
    /// Softmax probabilities, so scores sum to 1.
    fn scores(&self, x: &[f64]) -> Result<[f64; 3]> {
        Ok(crate::vision::softmax3(self.logits(x)?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig {
            hidden: 64,
            epochs: 60,
            learning_rate: 3e-3,
        }
    }
}

pub fn mlp_train(
    features: &[Vec<f64>],
    labels: &[ReferralDecision],
    cfg: &MlpTrainConfig,
    seed: u64,
) -> Result<MlpHead> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidArgument(
            "mlp: features and labels must be equal-length and non-empty".into(),
        ));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch {
            op: "mlp_train",
            detail: "ragged feature matrix".into(),
        });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "mlp_train" });
    }
    let mut rng = substream(seed, "mlp-init");
    let mut head = MlpHead::new(dim, cfg.hidden, &mut rng);
    let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoment, cfg.learning_rate);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut order_rng = substream(seed, "mlp-order");

    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for &i in &order {
            let mut tape = Tape::new();
            let binding = head.params.bind(&mut tape);
            let z = head.logits_vars(&mut tape, &binding, &features[i])?;
            let loss = tape.cross_entropy(z, &Tensor::row(&labels[i].one_hot()))?;
            tape.backward(loss)?;
            binding.harvest(&tape, &mut head.params);
            opt.step(&mut head.params)?;
        }
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ReferralDecision::*;

    #[test]
    fn untrained_head_is_uniform_on_zero_input() {
        let mut rng = substream(0, "t");
        let head = MlpHead::new(8, 16, &mut rng);
        let probs = head.scores(&[0.0; 8]).unwrap();
        for p in probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_sum_to_one_on_random_inputs() {
        let mut rng = substream(1, "t");
        let head = MlpHead::new(6, 12, &mut rng);
        use rand::Rng;
        let mut xr = substream(2, "x");
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| xr.random_range(-3.0..3.0)).collect();
            let s = head.scores(&x).unwrap();
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_fusions_reach_train_accuracy() {
        // three clusters in feature space, 95%+ train accuracy well inside
        // the 200-epoch budget
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut rng = substream(3, "data");
        use rand::Rng;
        for i in 0..60 {
            let class = i % 3;
            let center = [(class as f64) * 2.0 - 2.0, (class as f64).powi(2) - 1.0];
            features.push(vec![
                center[0] + rng.random_range(-0.3..0.3),
                center[1] + rng.random_range(-0.3..0.3),
            ]);
            labels.push(ReferralDecision::from_index(class));
        }
        let cfg = MlpTrainConfig {
            hidden: 16,
            epochs: 40,
            learning_rate: 5e-3,
        };
        let head = mlp_train(&features, &labels, &cfg, 11).unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(x, l)| head.predict(x).unwrap().0 == **l)
            .count();
        assert!(correct as f64 >= 0.95 * 60.0, "train accuracy {correct}/60");
    }

    #[test]
    fn single_class_training_is_allowed_for_mlp_but_degenerate_inputs_error() {
        assert!(mlp_train(&[], &[], &MlpTrainConfig::default(), 0).is_err());
        let bad = vec![vec![f64::NAN]];
        assert!(mlp_train(&bad, &[Continue], &MlpTrainConfig::default(), 0).is_err());
    }
}
