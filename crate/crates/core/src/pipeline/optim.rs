use crate::error::{Error, Result};

/// Velocity buffers for SGD with momentum.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    pub step: usize,
}

impl OptState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// `v ← momentum · v + g; p ← p − lr · v` for every tensor.
pub fn sgd_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if state.velocity.is_empty() && state.step == 0 {
        state.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::Shape("tensor sizes differ".into()));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    state.step += 1;
    Ok(())
}
