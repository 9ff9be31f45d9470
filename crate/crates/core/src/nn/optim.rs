//! Parameter traversal and SGD with classical momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Borrowed view of one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub fn child(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A structure of learnable tensors visited in a fixed order.
///
/// Gradients are represented by a value of the same type, so `collect` on
/// parameters and on their gradients always line up.
pub trait ParamSet {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>);

    fn param_refs(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.param_refs().iter().map(|p| p.data.len()).sum()
    }
}

impl ParamSet for Vec<f64> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: child(prefix, "value"),
            shape: vec![self.len()],
            data: self,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f64>>) {
        out.push(self);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(skip)]
    pub velocity: Vec<Vec<f64>>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState::new(0.01, 0.9)
    }
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        OptimizerState {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }
}

/// v <- momentum * v - lr * g ; w <- w + v
pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut OptimizerState) -> Result<()> {
    let grads = grads.param_refs();
    let mut slots = Vec::new();
    params.collect_mut(&mut slots);
    if slots.len() != grads.len() {
        return Err(Error::domain(format!(
            "{} parameter tensors but {} gradients",
            slots.len(),
            grads.len()
        )));
    }
    if state.velocity.is_empty() {
        state.velocity = slots.iter().map(|w| vec![0.0; w.len()]).collect();
    }
    if state.velocity.len() != slots.len() {
        return Err(Error::domain("optimizer state does not match parameter set"));
    }
    for ((w, g), v) in slots.iter().zip(&grads).zip(&state.velocity) {
        if w.len() != g.data.len() || w.len() != v.len() {
            return Err(Error::domain(format!("shape mismatch for parameter {}", g.name)));
        }
    }
    let (lr, m) = (state.learning_rate, state.momentum);
    for ((w, g), v) in slots.into_iter().zip(&grads).zip(state.velocity.iter_mut()) {
        for ((wi, &gi), vi) in w.iter_mut().zip(g.data).zip(v.iter_mut()) {
            *vi = m * *vi - lr * gi;
            *wi += *vi;
        }
    }
    Ok(())
}
