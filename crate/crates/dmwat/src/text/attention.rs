//! Disentangled attention: content and positional streams enter the score
//! separately as `softmax((Qc+Qp)(Kc+Kp)^T / sqrt(d_k)) V`.

use crate::error::Result;

/// Attention output together with its weight matrix.
pub type AttentionWithWeights = (Var, Var);
use crate::tensor::{Tape, Tensor, Var};

/// Tape-level disentangled attention. `valid` marks the key columns real
/// tokens occupy; masked columns receive exactly zero attention weight.
#[allow(clippy::too_many_arguments)]
pub fn disentangled_attention(
    tape: &mut Tape,
    qc: Var,
    qp: Var,
    kc: Var,
    kp: Var,
    v: Var,
    d_k: usize,
    valid: Option<&[bool]>,
) -> Result<Var> {
    let (out, _) = disentangled_attention_with_weights(tape, qc, qp, kc, kp, v, d_k, valid)?;
    Ok(out)
}

/// Same, also handing back the attention weight matrix for inspection.
#[allow(clippy::too_many_arguments)]
pub fn disentangled_attention_with_weights(
    tape: &mut Tape,
    qc: Var,
    qp: Var,
    kc: Var,
    kp: Var,
    v: Var,
    d_k: usize,
    valid: Option<&[bool]>,
) -> Result<AttentionWithWeights> {
    let q = tape.add(qc, qp)?;
    let k = tape.add(kc, kp)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = match valid {
        Some(mask) => tape.softmax_rows_masked(scaled, mask)?,
        None => tape.softmax_rows(scaled)?,
    };
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Value-level convenience used by tests and small probes.
pub fn disentangled_attention_values(
    qc: &Tensor,
    qp: &Tensor,
    kc: &Tensor,
    kp: &Tensor,
    v: &Tensor,
    d_k: usize,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let qc = tape.constant(qc.clone());
    let qp = tape.constant(qp.clone());
    let kc = tape.constant(kc.clone());
    let kp = tape.constant(kp.clone());
    let v = tape.constant(v.clone());
    let (out, w) = disentangled_attention_with_weights(&mut tape, qc, qp, kc, kp, v, d_k, None)?;
    Ok((tape.value(out).clone(), tape.value(w).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn zero_positions_reduce_to_standard_attention() {
        let qc = t(&[3, 2], &[0.4, -0.2, 1.0, 0.3, -0.5, 0.8]);
        let kc = t(&[3, 2], &[0.1, 0.9, -0.3, 0.2, 0.6, -0.1]);
        let v = t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        let zeros = Tensor::zeros(&[3, 2]);

        let (disentangled, _) =
            disentangled_attention_values(&qc, &zeros, &kc, &zeros, &v, 2).unwrap();

        // standard scaled dot-product attention built from the same primitives
        let mut tape = Tape::new();
        let q = tape.constant(qc);
        let k = tape.constant(kc);
        let vv = tape.constant(v);
        let kt = tape.transpose(k).unwrap();
        let scores = tape.matmul(q, kt).unwrap();
        let scaled = tape.scale(scores, 1.0 / 2.0_f64.sqrt()).unwrap();
        let w = tape.softmax_rows(scaled).unwrap();
        let standard = tape.matmul(w, vv).unwrap();

        for (a, b) in disentangled.data().iter().zip(tape.value(standard).data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let qc = t(&[4, 3], &[0.1; 12]);
        let qp = t(&[4, 3], &[-0.3; 12]);
        let kc = t(&[4, 3], &[0.7; 12]);
        let kp = t(&[4, 3], &[0.2; 12]);
        let v = t(&[4, 3], &[1.0; 12]);
        let (_, w) = disentangled_attention_values(&qc, &qp, &kc, &kp, &v, 3).unwrap();
        for i in 0..4 {
            let s: f64 = w.row_slice(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_token_case_matches_hand_evaluation() {
        // hand evaluation of the closed form with 2-dim embeddings:
        // q1 = qc1+qp1 = (1, 0), q2 = (0, 1)
        // k1 = kc1+kp1 = (1, 1), k2 = (2, 0)
        // scores/sqrt(2): row1 = (1, 2)/r2, row2 = (1, 0)/r2
        let qc = t(&[2, 2], &[0.5, -0.5, -1.0, 0.5]);
        let qp = t(&[2, 2], &[0.5, 0.5, 1.0, 0.5]);
        let kc = t(&[2, 2], &[0.0, 1.0, 1.5, -1.0]);
        let kp = t(&[2, 2], &[1.0, 0.0, 0.5, 1.0]);
        let v = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (out, w) = disentangled_attention_values(&qc, &qp, &kc, &kp, &v, 2).unwrap();

        let r2 = 2.0_f64.sqrt();
        let hand_row = |s1: f64, s2: f64| {
            let m = (s1 / r2).max(s2 / r2);
            let e1 = (s1 / r2 - m).exp();
            let e2 = (s2 / r2 - m).exp();
            [e1 / (e1 + e2), e2 / (e1 + e2)]
        };
        let w1 = hand_row(1.0, 2.0);
        let w2 = hand_row(1.0, 0.0);
        assert!((w.row_slice(0)[0] - w1[0]).abs() < 1e-12);
        assert!((w.row_slice(0)[1] - w1[1]).abs() < 1e-12);
        assert!((w.row_slice(1)[0] - w2[0]).abs() < 1e-12);
        assert!((w.row_slice(1)[1] - w2[1]).abs() < 1e-12);
        // output rows are the weight-blended value rows
        assert!((out.row_slice(0)[0] - (w1[0] + 3.0 * w1[1])).abs() < 1e-12);
        assert!((out.row_slice(1)[1] - (2.0 * w2[0] + 4.0 * w2[1])).abs() < 1e-12);
    }
}
