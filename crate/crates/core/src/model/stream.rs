use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::head::{Head, HeadGrads, HeadOutput};
use super::Mode;

/// Fully connected layer `h = a · Wᵀ + b` with `W` stored `out × in`. The
/// embedding layer has an empty `b`: the BNNeck and the pre-BN triplet
/// distances are both shift-invariant, so its bias would never move.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    fn forward(&self, a: &Matrix) -> Result<Matrix> {
        let mut h = a.matmul_t(&self.weight)?;
        for r in 0..h.rows() {
            for (v, b) in h.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(h)
    }
}

/// One modality backbone plus its head.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamParams {
    pub layers: Vec<Linear>,
    pub head: Head,
}

/// Intermediates kept from a train-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamCache {
    /// Input of every layer; `inputs[0]` is the batch itself.
    pub inputs: Vec<Matrix>,
    /// Pre-activation of every hidden layer.
    pub pre_acts: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamOutput {
    pub z: Matrix,
    pub z_bn: Matrix,
    pub logits: Option<Matrix>,
    pub mode: Mode,
    pub(crate) head_out: HeadOutput,
    pub(crate) cache: StreamCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamGrads {
    /// `(dW, db)` per layer.
    pub layers: Vec<(Matrix, Vec<f64>)>,
    pub head: Option<HeadGrads>,
    pub input: Matrix,
}

impl StreamGrads {
    pub(crate) fn push_slices<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for (w, b) in &self.layers {
            out.push(w.data());
            out.push(b);
        }
        if let Some(h) = &self.head {
            h.push_slices(out);
        }
    }
}

impl StreamParams {
    /// Kaiming-normal weights `N(0, 2 / fan_in)`, zero hidden biases, no
    /// embedding bias. `widths` runs from the input dimension to the embedding
    /// dimension.
    pub fn init(widths: &[usize], num_ids: Option<usize>, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                Linear {
                    weight: rng.normal_matrix(fan_out, fan_in).scale(std),
                    bias: if l == last {
                        Vec::new()
                    } else {
                        vec![0.0; fan_out]
                    },
                }
            })
            .collect();
        let embed = *widths.last().expect("checked above");
        let head = Head::init(embed, num_ids, rng);
        Ok(Self { layers, head })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    fn backbone(&self, x: &Matrix) -> Result<(Matrix, StreamCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "stream expects {} input columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut inputs = vec![x.clone()];
        let mut pre_acts = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.forward(&a)?;
            if l == last {
                a = h;
            } else {
                let mut act = h.clone();
                act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                pre_acts.push(h);
                inputs.push(act.clone());
                a = act;
            }
        }
        Ok((a, StreamCache { inputs, pre_acts }))
    }

    /// Forward pass. Train mode uses batch statistics and updates the running
    /// ones; eval mode only reads parameters.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<StreamOutput> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }

    pub fn forward_train(&mut self, x: &Matrix) -> Result<StreamOutput> {
        let (z, cache) = self.backbone(x)?;
        let head_out = self.head.forward_train(&z)?;
        Ok(StreamOutput {
            z,
            z_bn: head_out.z_bn.clone(),
            logits: head_out.logits.clone(),
            mode: Mode::Train,
            head_out,
            cache,
        })
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<StreamOutput> {
        let (z, cache) = self.backbone(x)?;
        let head_out = self.head.forward_eval(&z)?;
        Ok(StreamOutput {
            z,
            z_bn: head_out.z_bn.clone(),
            logits: head_out.logits.clone(),
            mode: Mode::Eval,
            head_out,
            cache,
        })
    }

    /// Exact gradients. `grad_z` enters at the pre-BN embedding; `grad_logits`
    /// (required iff the head is trainable) enters at the classifier and flows
    /// back through the BNNeck.
    pub fn backward(
        &self,
        out: &StreamOutput,
        grad_z: &Matrix,
        grad_logits: Option<&Matrix>,
    ) -> Result<StreamGrads> {
        if out.mode != Mode::Train {
            return Err(Error::InvalidState(
                "backward needs a train-mode forward pass".into(),
            ));
        }
        out.z.check_same_shape(grad_z, "grad_z")?;
        let mut delta = grad_z.clone();
        let head = match (grad_logits, self.head.is_trainable()) {
            (Some(g), true) => {
                let (gz, hg) = self.head.backward(&out.head_out, g)?;
                delta.add_assign(&gz)?;
                Some(hg)
            }
            (None, false) => None,
            (Some(_), false) => {
                return Err(Error::InvalidState(
                    "grad_logits given for a head without classifier".into(),
                ))
            }
            (None, true) => {
                return Err(Error::InvalidState(
                    "trainable head requires grad_logits".into(),
                ))
            }
        };

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a = &out.cache.inputs[l];
            let dw = delta.t_matmul(a)?;
            let mut db = vec![0.0; self.layers[l].bias.len()];
            for r in 0..delta.rows() {
                for (s, v) in db.iter_mut().zip(delta.row(r)) {
                    *s += v;
                }
            }
            let mut prev = delta.matmul(&self.layers[l].weight)?;
            if l > 0 {
                let pre = &out.cache.pre_acts[l - 1];
                for (g, p) in prev.data_mut().iter_mut().zip(pre.data()) {
                    if *p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            layer_grads.push((dw, db));
            delta = prev;
        }
        layer_grads.reverse();
        Ok(StreamGrads {
            layers: layer_grads,
            head,
            input: delta,
        })
    }

    pub(crate) fn push_param_slices<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for layer in &mut self.layers {
            out.push(layer.weight.data_mut());
            out.push(&mut layer.bias);
        }
        self.head.push_param_slices(out);
    }
}
