//! Toy DeBERTa-style text encoder: disentangled attention over separate
//! content and relative-position embeddings, plus an enhanced-mask-decoder
//! (EMD) MLM mode that injects absolute positions only into the final layers.

pub mod attention;
mod mlm;
mod tokenizer;
mod train;

pub use attention::{disentangled_attention, disentangled_attention_values};
pub use mlm::{masked_note_loss, mlm_pretrain, sample_mask_plan, MaskAction, MaskPlan, MlmStats};
pub use tokenizer::{
    split_tokens, tokenize, ClinicalNote, Vocabulary, CLS_ID, MASK_ID, PAD_ID, UNK_ID,
};
pub use train::{train_text_classifier, TextClassifier, TextTrainConfig, TextTrainStats};

use crate::error::{Error, Result};
use crate::tensor::{Binding, ParamId, ParamSet, Tape, Tensor, Var};
use crate::vision::affine_layernorm;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_len: usize,
    /// Relative distances are clamped to `[-k, k]`; the table spans 2k+1
    /// buckets.
    pub relative_bucket_k: usize,
    /// Number of final layers whose inputs receive absolute position
    /// embeddings (the enhanced mask decoder).
    pub emd_layers: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            max_len: 24,
            relative_bucket_k: 8,
            emd_layers: 1,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_layers == 0 || self.num_heads == 0 || self.max_len == 0
        {
            return Err(Error::Config("text: all dimensions must be positive".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "text: embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.emd_layers > self.num_layers {
            return Err(Error::Config(format!(
                "text: emd_layers {} exceeds num_layers {}",
                self.emd_layers, self.num_layers
            )));
        }
        Ok(())
    }
}

struct TextLayerIds {
    /// Per-layer absolute position table; only the final `emd_layers` layers
    /// ever read theirs.
    abs_pos: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wq_p: ParamId,
    wk_p: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct TextIds {
    content: ParamId,
    rel_pos: ParamId,
    layers: Vec<TextLayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    mlm_bias: ParamId,
}

const MLP_RATIO: usize = 2;

pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    pub vocab_size: usize,
    pub params: ParamSet,
    ids: TextIds,
}

impl TextEncoder {
    pub fn new(cfg: TextEncoderConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 4 {
            return Err(Error::Config("text: vocabulary too small".into()));
        }
        let d = cfg.embed_dim;
        let mut params = ParamSet::new();
        // content and position tables are distinct parameter sets, never tied
        let content = params.add("content", Tensor::rand_uniform(&[vocab_size, d], 0.05, rng));
        let rel_pos = params.add(
            "rel_pos",
            Tensor::rand_uniform(&[2 * cfg.relative_bucket_k + 1, d], 0.05, rng),
        );
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let pfx = format!("layer{l}");
            layers.push(TextLayerIds {
                abs_pos: params.add(
                    format!("{pfx}.abs_pos"),
                    Tensor::rand_uniform(&[cfg.max_len, d], 0.05, rng),
                ),
                ln1_g: params.add(format!("{pfx}.ln1.g"), ones(&[1, d])),
                ln1_b: params.add(format!("{pfx}.ln1.b"), Tensor::zeros(&[1, d])),
                wq: params.add(format!("{pfx}.attn.wq"), crate::vision::init(&[d, d], rng)),
                wk: params.add(format!("{pfx}.attn.wk"), crate::vision::init(&[d, d], rng)),
                wv: params.add(format!("{pfx}.attn.wv"), crate::vision::init(&[d, d], rng)),
                wq_p: params.add(format!("{pfx}.attn.wq_p"), crate::vision::init(&[d, d], rng)),
                wk_p: params.add(format!("{pfx}.attn.wk_p"), crate::vision::init(&[d, d], rng)),
                wo: params.add(format!("{pfx}.attn.wo"), crate::vision::init(&[d, d], rng)),
                bo: params.add(format!("{pfx}.attn.bo"), Tensor::zeros(&[1, d])),
                ln2_g: params.add(format!("{pfx}.ln2.g"), ones(&[1, d])),
                ln2_b: params.add(format!("{pfx}.ln2.b"), Tensor::zeros(&[1, d])),
                w1: params.add(
                    format!("{pfx}.mlp.w1"),
                    crate::vision::init(&[d, MLP_RATIO * d], rng),
                ),
                b1: params.add(format!("{pfx}.mlp.b1"), Tensor::zeros(&[1, MLP_RATIO * d])),
                w2: params.add(
                    format!("{pfx}.mlp.w2"),
                    crate::vision::init(&[MLP_RATIO * d, d], rng),
                ),
                b2: params.add(format!("{pfx}.mlp.b2"), Tensor::zeros(&[1, d])),
            });
        }
        let lnf_g = params.add("lnf.g", ones(&[1, d]));
        let lnf_b = params.add("lnf.b", Tensor::zeros(&[1, d]));
        let mlm_bias = params.add("mlm.bias", Tensor::zeros(&[1, vocab_size]));

        Ok(TextEncoder {
            cfg,
            vocab_size,
            params,
            ids: TextIds {
                content,
                rel_pos,
                layers,
                lnf_g,
                lnf_b,
                mlm_bias,
            },
        })
    }

    /// Bucket index of a token position: signed distance to the CLS anchor at
    /// position 0, clamped to `[-k, k]`, shifted to a table row. Positions
    /// past `k` saturate into one shared bucket, which is exactly what makes
    /// the pure-relative encoding blind to tail ordering; the EMD's absolute
    /// embeddings are what restore it.
    pub fn rel_bucket(&self, pos: usize) -> usize {
        let k = self.cfg.relative_bucket_k as i64;
        ((pos as i64).clamp(-k, k) + k) as usize
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 || len > self.cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "note length {len} outside 1..={}",
                self.cfg.max_len
            )));
        }
        Ok(())
    }

    /// Content-embedding matrix of a note, off-tape (the IG input point).
    pub fn content_embeddings(&self, note: &ClinicalNote) -> Tensor {
        let table = self.params.value(self.ids.content);
        let d = self.cfg.embed_dim;
        let mut data = Vec::with_capacity(note.len() * d);
        for &id in &note.token_ids {
            data.extend_from_slice(table.row_slice(id));
        }
        Tensor::new(&[note.len(), d], data).expect("table row arithmetic")
    }

    /// Embedding matrix of the all-PAD baseline sequence.
    pub fn pad_baseline_embeddings(&self, len: usize) -> Tensor {
        let table = self.params.value(self.ids.content);
        let d = self.cfg.embed_dim;
        let row = table.row_slice(PAD_ID);
        let mut data = Vec::with_capacity(len * d);
        for _ in 0..len {
            data.extend_from_slice(row);
        }
        Tensor::new(&[len, d], data).expect("pad row arithmetic")
    }

    /// Forward pass over token ids (content embeddings looked up on-tape so
    /// the table trains).
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        b: &Binding,
        note: &ClinicalNote,
    ) -> Result<Var> {
        self.check_len(note.len())?;
        let x0 = tape.embed_lookup(b.var(self.ids.content), &note.token_ids)?;
        self.forward_inner(tape, b, x0, &note.valid_mask())
    }

    /// Forward pass from a caller-supplied embedding matrix (the Integrated
    /// Gradients path, where the input itself carries the gradient).
    pub fn forward_from_embeddings(
        &self,
        tape: &mut Tape,
        b: &Binding,
        embeddings: Var,
        valid: &[bool],
    ) -> Result<Var> {
        self.check_len(tape.value(embeddings).rows())?;
        self.forward_inner(tape, b, embeddings, valid)
    }

    fn forward_inner(
        &self,
        tape: &mut Tape,
        b: &Binding,
        x0: Var,
        valid: &[bool],
    ) -> Result<Var> {
        let len = valid.len();
        let d = self.cfg.embed_dim;
        let dh = d / self.cfg.num_heads;
        let positions: Vec<usize> = (0..len).collect();
        let buckets: Vec<usize> = positions.iter().map(|&p| self.rel_bucket(p)).collect();
        let pos_seq = tape.embed_lookup(b.var(self.ids.rel_pos), &buckets)?;

        let mut x = x0;
        for (l, layer) in self.ids.layers.iter().enumerate() {
            if l >= self.cfg.num_layers - self.cfg.emd_layers {
                let abs = tape.embed_lookup(b.var(layer.abs_pos), &positions)?;
                x = tape.add(x, abs)?;
            }
            let normed = affine_layernorm(tape, x, b.var(layer.ln1_g), b.var(layer.ln1_b))?;
            let qc = tape.matmul(normed, b.var(layer.wq))?;
            let kc = tape.matmul(normed, b.var(layer.wk))?;
            let v = tape.matmul(normed, b.var(layer.wv))?;
            let qp = tape.matmul(pos_seq, b.var(layer.wq_p))?;
            let kp = tape.matmul(pos_seq, b.var(layer.wk_p))?;

            let mut heads: Option<Var> = None;
            for h in 0..self.cfg.num_heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qc_h = tape.slice_cols(qc, lo, hi)?;
                let kc_h = tape.slice_cols(kc, lo, hi)?;
                let v_h = tape.slice_cols(v, lo, hi)?;
                let qp_h = tape.slice_cols(qp, lo, hi)?;
                let kp_h = tape.slice_cols(kp, lo, hi)?;
                let out = attention::disentangled_attention(
                    tape,
                    qc_h,
                    qp_h,
                    kc_h,
                    kp_h,
                    v_h,
                    dh,
                    Some(valid),
                )?;
                heads = Some(match heads {
                    None => out,
                    Some(acc) => tape.concat_cols(acc, out)?,
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
        }
        affine_layernorm(tape, x, b.var(self.ids.lnf_g), b.var(self.ids.lnf_b))
    }

    /// CLS-position final state: the note embedding handed to fusion.
    pub fn encode_note(&self, note: &ClinicalNote) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let binding = self.params.bind_frozen(&mut tape);
        let states = self.forward_vars(&mut tape, &binding, note)?;
        Ok(tape.value(states).row_slice(0).to_vec())
    }

    /// MLM vocabulary logits for selected sequence positions: states times
    /// the transposed content table (tied softmax embedding) plus bias.
    pub fn mlm_logits_at(
        &self,
        tape: &mut Tape,
        b: &Binding,
        states: Var,
        positions: &[usize],
    ) -> Result<Var> {
        let picked = tape.gather_rows(states, positions)?;
        let table_t = tape.transpose(b.var(self.ids.content))?;
        let z = tape.matmul(picked, table_t)?;
        tape.add(z, b.var(self.ids.mlm_bias))
    }

    /// ParamIds of every per-layer absolute position table (EMD tests).
    pub fn abs_pos_param_ids(&self) -> Vec<ParamId> {
        self.ids.layers.iter().map(|l| l.abs_pos).collect()
    }

    pub fn content_param_id(&self) -> ParamId {
        self.ids.content
    }
}

fn ones(shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    Tensor::new(shape, vec![1.0; numel]).expect("static shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn toy_cfg() -> TextEncoderConfig {
        TextEncoderConfig {
            embed_dim: 16,
            num_layers: 2,
            num_heads: 2,
            max_len: 12,
            relative_bucket_k: 4,
            emd_layers: 1,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::build([
            "wound healing well . odor purulent granulating clean dry heel ankle shin",
        ])
    }

    #[test]
    fn identical_notes_give_identical_embeddings() {
        let v = vocab();
        let mut rng = substream(0, "init");
        let enc = TextEncoder::new(toy_cfg(), v.len(), &mut rng).unwrap();
        let note = tokenize("wound healing well .", &v, 12);
        let a = enc.encode_note(&note).unwrap();
        let b = enc.encode_note(&note).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_norm_is_finite_positive() {
        let v = vocab();
        let mut rng = substream(1, "init");
        let enc = TextEncoder::new(toy_cfg(), v.len(), &mut rng).unwrap();
        let note = tokenize("odor purulent wound", &v, 12);
        let emb = enc.encode_note(&note).unwrap();
        let norm: f64 = emb.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm.is_finite() && norm > 0.0);
    }

    #[test]
    fn pads_are_invisible_to_the_cls_embedding() {
        // the same tokens under different amounts of trailing padding agree
        // on the CLS state, because PAD columns carry exactly zero weight
        let v = vocab();
        let mut rng = substream(2, "init");
        let enc = TextEncoder::new(toy_cfg(), v.len(), &mut rng).unwrap();
        let short = tokenize("wound healing well", &v, 6);
        let long = tokenize("wound healing well", &v, 12);
        let a = enc.encode_note(&short).unwrap();
        let b = enc.encode_note(&long).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pad_columns_get_zero_attention_weight() {
        let v = vocab();
        let note = tokenize("wound healing", &v, 6);
        let mask = note.valid_mask();
        assert_eq!(mask, vec![true, true, true, false, false, false]);

        let mut tape = Tape::new();
        let s = tape.constant(Tensor::new(&[6, 6], (0..36).map(f64::from).collect()).unwrap());
        let w = tape.softmax_rows_masked(s, &mask).unwrap();
        for row in 0..6 {
            let r = tape.value(w).row_slice(row);
            assert_eq!(&r[3..], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn rel_bucket_saturates_past_k() {
        let v = vocab();
        let mut rng = substream(3, "init");
        let enc = TextEncoder::new(toy_cfg(), v.len(), &mut rng).unwrap();
        assert_eq!(enc.rel_bucket(0), 4);
        assert_eq!(enc.rel_bucket(3), 7);
        assert_eq!(enc.rel_bucket(4), 8);
        assert_eq!(enc.rel_bucket(5), 8);
        assert_eq!(enc.rel_bucket(11), 8);
    }
}
