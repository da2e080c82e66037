use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::{BN_EPS, BN_MOMENTUM};

/// Scale-only batch normalization with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BnNeck {
    pub gamma: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BnNeck {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check_dim(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "BNNeck of width {} fed {} columns",
                self.dim(),
                z.cols()
            )));
        }
        Ok(())
    }

    /// Batch-statistics normalization; updates the running statistics.
    pub fn forward_train(&mut self, z: &Matrix) -> Result<(Matrix, HeadCache)> {
        self.check_dim(z)?;
        let n = z.rows();
        if n < 2 {
            return Err(Error::BatchStats(format!(
                "train-mode batch normalization needs at least 2 rows, got {n}"
            )));
        }
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(z.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = Matrix::zeros(n, d);
        let mut z_bn = Matrix::zeros(n, d);
        for r in 0..n {
            let zr = z.row(r);
            for c in 0..d {
                let xh = (zr[c] - mean[c]) * inv_std[c];
                x_hat.set(r, c, xh);
                z_bn.set(r, c, self.gamma[c] * xh);
            }
        }

        let unbias = n as f64 / (n as f64 - 1.0);
        for c in 0..d {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean[c];
            self.running_var[c] =
                (1.0 - self.momentum) * self.running_var[c] + self.momentum * var[c] * unbias;
        }
        Ok((z_bn, HeadCache { x_hat, inv_std }))
    }

    pub fn forward_eval(&self, z: &Matrix) -> Result<Matrix> {
        self.check_dim(z)?;
        let d = self.dim();
        let scale: Vec<f64> = (0..d)
            .map(|c| self.gamma[c] / (self.running_var[c] + self.eps).sqrt())
            .collect();
        let mut out = Matrix::zeros(z.rows(), d);
        for r in 0..z.rows() {
            let zr = z.row(r);
            let o = out.row_mut(r);
            for c in 0..d {
                o[c] = (zr[c] - self.running_mean[c]) * scale[c];
            }
        }
        Ok(out)
    }

    /// Gradient w.r.t. the BN input and γ, given the gradient at the BN output.
    pub fn backward(&self, cache: &HeadCache, grad_out: &Matrix) -> (Matrix, Vec<f64>) {
        let (n, d) = grad_out.shape();
        let nf = n as f64;
        let mut grad_gamma = vec![0.0; d];
        let mut sum_dxh = vec![0.0; d];
        let mut sum_dxh_xh = vec![0.0; d];
        for r in 0..n {
            let g = grad_out.row(r);
            let xh = cache.x_hat.row(r);
            for c in 0..d {
                grad_gamma[c] += g[c] * xh[c];
                let dxh = g[c] * self.gamma[c];
                sum_dxh[c] += dxh;
                sum_dxh_xh[c] += dxh * xh[c];
            }
        }
        let mut grad_z = Matrix::zeros(n, d);
        for r in 0..n {
            let g = grad_out.row(r);
            let xh = cache.x_hat.row(r);
            let out = grad_z.row_mut(r);
            for c in 0..d {
                let dxh = g[c] * self.gamma[c];
                out[c] = cache.inv_std[c] / nf * (nf * dxh - sum_dxh[c] - xh[c] * sum_dxh_xh[c]);
            }
        }
        (grad_z, grad_gamma)
    }
}

/// Training-mode intermediates of a BNNeck.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
}

/// BNNeck followed by an optional bias-free linear classifier
/// (`num_ids × dim`). A head without classifier only tracks statistics and is
/// not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub bn: BnNeck,
    pub classifier: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub z_bn: Matrix,
    pub logits: Option<Matrix>,
    pub cache: Option<HeadCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub gamma: Vec<f64>,
    pub classifier: Matrix,
}

impl HeadGrads {
    pub(crate) fn push_slices<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(&self.gamma);
        out.push(self.classifier.data());
    }
}

impl Head {
    /// Kaiming-normal classifier (`std = sqrt(2 / dim)`), γ = 1, running (0, 1).
    pub fn init(dim: usize, num_ids: Option<usize>, rng: &mut Rng) -> Self {
        let classifier = num_ids.map(|k| {
            let std = (2.0 / dim as f64).sqrt();
            rng.normal_matrix(k, dim).scale(std)
        });
        Self {
            bn: BnNeck::new(dim),
            classifier,
        }
    }

    pub fn dim(&self) -> usize {
        self.bn.dim()
    }

    pub fn is_trainable(&self) -> bool {
        self.classifier.is_some()
    }

    fn logits(&self, z_bn: &Matrix) -> Result<Option<Matrix>> {
        self.classifier
            .as_ref()
            .map(|w| z_bn.matmul_t(w))
            .transpose()
    }

    pub fn forward_train(&mut self, z: &Matrix) -> Result<HeadOutput> {
        let (z_bn, cache) = self.bn.forward_train(z)?;
        let logits = self.logits(&z_bn)?;
        Ok(HeadOutput {
            z_bn,
            logits,
            cache: Some(cache),
        })
    }

    pub fn forward_eval(&self, z: &Matrix) -> Result<HeadOutput> {
        let z_bn = self.bn.forward_eval(z)?;
        let logits = self.logits(&z_bn)?;
        Ok(HeadOutput {
            z_bn,
            logits,
            cache: None,
        })
    }

    /// Backpropagates `grad_logits` through the classifier and the BNNeck.
    /// Returns the gradient at the head input `z` and the parameter gradients.
    pub fn backward(&self, out: &HeadOutput, grad_logits: &Matrix) -> Result<(Matrix, HeadGrads)> {
        let cache = out.cache.as_ref().ok_or_else(|| {
            Error::InvalidState("backward needs a train-mode forward pass".into())
        })?;
        let w = self
            .classifier
            .as_ref()
            .ok_or_else(|| Error::InvalidState("head has no classifier".into()))?;
        if grad_logits.shape() != (out.z_bn.rows(), w.rows()) {
            return Err(Error::Shape(format!(
                "grad_logits is {}x{}, logits are {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                out.z_bn.rows(),
                w.rows()
            )));
        }
        let classifier = grad_logits.t_matmul(&out.z_bn)?;
        let grad_bn = grad_logits.matmul(w)?;
        let (grad_z, gamma) = self.bn.backward(cache, &grad_bn);
        Ok((grad_z, HeadGrads { gamma, classifier }))
    }

    pub(crate) fn push_param_slices<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        if let Some(w) = &mut self.classifier {
            out.push(&mut self.bn.gamma);
            out.push(w.data_mut());
        }
    }
}
