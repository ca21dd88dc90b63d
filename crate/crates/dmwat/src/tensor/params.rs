//! Named parameter storage shared by all trainable models.
//!
//! Parameters persist across training steps; each forward pass binds them
//! onto a fresh [`Tape`] and harvests gradients back after `backward`.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
}

/// Ordered set of named parameters. Order is creation order and is stable,
/// which the optimizer and checkpoint format both rely on.
#[derive(Default)]
pub struct ParamSet {
    items: Vec<Entry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.items.push(Entry {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.items.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.items[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.items[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.items[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.items[id.0].grad.as_deref()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.items.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.items.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.items {
            e.grad = None;
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.items.iter().map(|e| e.value.numel()).sum()
    }

    /// Lease every parameter onto `tape` as a grad-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .items
            .iter()
            .map(|e| tape.leaf(e.value.clone(), true))
            .collect();
        Binding { vars }
    }

    /// Lease parameters as constants: inference, or passes where gradients
    /// should flow through the weights but not into them.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .items
            .iter()
            .map(|e| tape.leaf(e.value.clone(), false))
            .collect();
        Binding { vars }
    }

    pub(super) fn apply<F: FnMut(&mut Tensor, &[f64])>(&mut self, mut f: F) -> Result<()> {
        for e in &mut self.items {
            let g = e
                .grad
                .as_deref()
                .ok_or_else(|| Error::MissingGrad(e.name.clone()))?;
            // split borrow: grad read above is cloned cheaply only when needed
            let g = g.to_vec();
            f(&mut e.value, &g);
        }
        Ok(())
    }

    fn accumulate_grad(&mut self, idx: usize, g: Option<&[f64]>) {
        let numel = self.items[idx].value.numel();
        let buf = self.items[idx].grad.get_or_insert_with(|| vec![0.0; numel]);
        if let Some(g) = g {
            for (d, s) in buf.iter_mut().zip(g) {
                *d += s;
            }
        }
    }
}

/// Per-forward mapping from parameters to tape variables.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Pull gradients off the tape into the parameter set, accumulating over
    /// repeated harvests. Parameters that took no part in the loss get an
    /// explicit zero gradient, so an optimizer step after harvest never
    /// reports them missing.
    pub fn harvest(&self, tape: &Tape, params: &mut ParamSet) {
        for (idx, v) in self.vars.iter().enumerate() {
            params.accumulate_grad(idx, tape.grad(*v));
        }
    }
}
