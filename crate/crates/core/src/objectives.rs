//! ReID objective (soft-margin batch-hard triplet + λ·cross-entropy), the late
//! fusion operators, and the loss wiring of the three training strategies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FusedHead, HeadGrads, HeadOutput, StreamOutput};
use crate::numerics::{pairwise_euclidean, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the cross-entropy term.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Triplet margin α inside the softplus.
    #[serde(default)]
    pub margin: f64,
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            margin: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 || !self.margin.is_finite() {
            return Err(Error::Config(
                "loss.lambda must be finite and non-negative, loss.margin finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionOperator {
    Average,
    Concat,
}

impl FusionOperator {
    pub fn fused_dim(self, dims: &[usize]) -> Result<usize> {
        match self {
            FusionOperator::Concat => Ok(dims.iter().sum()),
            FusionOperator::Average => {
                let first = *dims
                    .first()
                    .ok_or_else(|| Error::Shape("nothing to fuse".into()))?;
                if dims.iter().any(|&d| d != first) {
                    return Err(Error::Shape(format!(
                        "average fusion needs equal widths, got {dims:?}"
                    )));
                }
                Ok(first)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "fusion-avg")]
    FusionAvg,
    #[serde(rename = "fusion-concat")]
    FusionConcat,
    #[serde(rename = "unicat")]
    UniCat,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::FusionAvg,
        Strategy::FusionConcat,
        Strategy::UniCat,
    ];

    /// Operator of the global training loss; `None` for UniCat.
    pub fn fusion_operator(self) -> Option<FusionOperator> {
        match self {
            Strategy::FusionAvg => Some(FusionOperator::Average),
            Strategy::FusionConcat => Some(FusionOperator::Concat),
            Strategy::UniCat => None,
        }
    }

    /// Default for per-stream ℓ2 normalization before inference-time fusion.
    pub fn default_normalize_first(self) -> bool {
        self == Strategy::UniCat
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FusionAvg => "fusion-avg",
            Strategy::FusionConcat => "fusion-concat",
            Strategy::UniCat => "unicat",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Strategy::FusionAvg => "Fusion-avg",
            Strategy::FusionConcat => "Fusion-concat",
            Strategy::UniCat => "UniCat",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Hardest positive / negative chosen for every anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletSelection {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub d_ap: Vec<f64>,
    pub d_an: Vec<f64>,
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch-hard soft-margin triplet loss on embeddings `z`.
///
/// Per anchor the farthest same-label sample and the nearest other-label
/// sample are selected (ties to the lowest index); the term is
/// `ln(1 + exp(d_ap − d_an + margin))` and the loss is its mean over anchors.
/// The gradient flows through the selected pairs only; a zero distance
/// contributes a zero subgradient.
pub fn triplet_loss(
    z: &Matrix,
    labels: &[usize],
    margin: f64,
) -> Result<(f64, Matrix, TripletSelection)> {
    let n = z.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let dist = pairwise_euclidean(z, z)?;
    let mut sel = TripletSelection {
        positive: Vec::with_capacity(n),
        negative: Vec::with_capacity(n),
        d_ap: Vec::with_capacity(n),
        d_an: Vec::with_capacity(n),
    };
    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            let d = dist.get(a, j);
            if labels[j] == labels[a] {
                if j != a && pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let ((p, dp), (q, dn)) = pos.zip(neg).ok_or_else(|| {
            Error::BatchComposition(format!(
                "anchor {a} (label {}) lacks a positive or a negative in the batch",
                labels[a]
            ))
        })?;
        sel.positive.push(p);
        sel.negative.push(q);
        sel.d_ap.push(dp);
        sel.d_an.push(dn);
    }

    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, z.cols());
    for a in 0..n {
        let x = sel.d_ap[a] - sel.d_an[a] + margin;
        loss += softplus(x);
        let w = sigmoid(x) / nf;
        let (p, q) = (sel.positive[a], sel.negative[a]);
        if sel.d_ap[a] > 0.0 {
            let c = w / sel.d_ap[a];
            for k in 0..z.cols() {
                let diff = z.get(a, k) - z.get(p, k);
                grad.data_mut()[a * z.cols() + k] += c * diff;
                grad.data_mut()[p * z.cols() + k] -= c * diff;
            }
        }
        if sel.d_an[a] > 0.0 {
            let c = w / sel.d_an[a];
            for k in 0..z.cols() {
                let diff = z.get(a, k) - z.get(q, k);
                grad.data_mut()[a * z.cols() + k] -= c * diff;
                grad.data_mut()[q * z.cols() + k] += c * diff;
            }
        }
    }
    Ok((loss / nf, grad, sel))
}

/// Mean softmax cross-entropy with max subtraction; gradient `(softmax − onehot) / batch`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label(format!("label {bad} with only {c} classes")));
    }
    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, c);
    for r in 0..n {
        let row = logits.row(r);
        let (arg, m) =
            row.iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
                );
        let mut others = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if j != arg {
                others += (v - m).exp();
            }
        }
        let lse = m + others.ln_1p();
        loss += lse - row[labels[r]];
        let g = grad.row_mut(r);
        for (j, &v) in row.iter().enumerate() {
            g[j] = (v - lse).exp() / nf;
        }
        g[labels[r]] -= 1.0 / nf;
    }
    Ok((loss / nf, grad))
}

/// Value and gradients of `triplet(z) + λ · CE(logits)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub loss: f64,
    pub triplet: f64,
    pub ce: f64,
    pub grad_z: Matrix,
    pub grad_logits: Matrix,
}

pub fn combined_loss(
    z: &Matrix,
    logits: &Matrix,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<CombinedLoss> {
    let (triplet, grad_z, _) = triplet_loss(z, labels, cfg.margin)?;
    let (ce, grad_ce) = cross_entropy(logits, labels)?;
    let grad_logits = if cfg.lambda == 1.0 {
        grad_ce
    } else {
        grad_ce.scale(cfg.lambda)
    };
    Ok(CombinedLoss {
        loss: triplet + cfg.lambda * ce,
        triplet,
        ce,
        grad_z,
        grad_logits,
    })
}

fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for (r, norm) in m.row_norms().into_iter().enumerate() {
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding(format!(
                "row {r} has zero norm and cannot be normalized"
            )));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// `Θ(z_1, …, z_M)`: row-wise concatenation or element-wise mean, optionally
/// ℓ2-normalizing each stream's rows first.
pub fn fuse(parts: &[&Matrix], op: FusionOperator, normalize_first: bool) -> Result<Matrix> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("nothing to fuse".into()))?;
    if parts.iter().any(|p| p.rows() != first.rows()) {
        return Err(Error::Shape(
            "fused streams have different row counts".into(),
        ));
    }
    let dims: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
    op.fused_dim(&dims)?;
    let normalized;
    let parts: Vec<&Matrix> = if normalize_first {
        normalized = parts
            .iter()
            .map(|p| l2_normalize_rows(p))
            .collect::<Result<Vec<_>>>()?;
        normalized.iter().collect()
    } else {
        parts.to_vec()
    };
    match op {
        FusionOperator::Concat => Matrix::hcat(&parts),
        FusionOperator::Average => {
            let mut acc = parts[0].clone();
            for p in &parts[1..] {
                acc.add_assign(p)?;
            }
            Ok(acc.scale(1.0 / parts.len() as f64))
        }
    }
}

/// Gradient of an unnormalized fusion w.r.t. each input stream.
pub fn fuse_backward(
    grad_fused: &Matrix,
    dims: &[usize],
    op: FusionOperator,
) -> Result<Vec<Matrix>> {
    let fused = op.fused_dim(dims)?;
    if grad_fused.cols() != fused {
        return Err(Error::Shape(format!(
            "fused gradient has {} columns, expected {fused}",
            grad_fused.cols()
        )));
    }
    Ok(match op {
        FusionOperator::Concat => {
            let mut start = 0;
            dims.iter()
                .map(|&d| {
                    let block = grad_fused.column_block(start, d);
                    start += d;
                    block
                })
                .collect()
        }
        FusionOperator::Average => {
            let g = grad_fused.scale(1.0 / dims.len() as f64);
            vec![g; dims.len()]
        }
    })
}

/// Train-mode output of the fused head.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedForward {
    pub z_fuse: Matrix,
    pub out: HeadOutput,
}

/// Upstream gradients for every stream and the fused head parameter gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyGrads {
    pub stream_grad_z: Vec<Matrix>,
    pub stream_grad_logits: Vec<Option<Matrix>>,
    pub fused: Option<HeadGrads>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyLoss {
    pub loss: f64,
    /// UniCat: every stream's local loss. Fusion strategies: the single global loss.
    pub parts: Vec<f64>,
    /// Classification accuracy of the trained classifier(s) on this batch.
    pub accuracy: f64,
    pub grads: StrategyGrads,
}

fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let hits = (0..logits.rows())
        .filter(|&r| {
            let row = logits.row(r);
            let arg = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            arg == labels[r]
        })
        .count();
    hits as f64 / logits.rows() as f64
}

/// Loss of one strategy on one batch.
///
/// Fusion-avg / Fusion-concat: `combined_loss(z_fuse, ỹ_fuse)` from the fused
/// head; the gradient at `z_fuse` (triplet plus the CE path back through the
/// fused BNNeck) is split across streams by the operator's chain rule.
///
/// UniCat: `Σ_i combined_loss(z_i, ỹ_i)`; stream `i` receives only the
/// gradient of its own term.
pub fn strategy_loss(
    streams: &[StreamOutput],
    fused: Option<(&FusedHead, &FusedForward)>,
    labels: &[usize],
    strategy: Strategy,
    cfg: &LossConfig,
) -> Result<StrategyLoss> {
    match strategy.fusion_operator() {
        None => {
            let mut loss = 0.0;
            let mut parts = Vec::with_capacity(streams.len());
            let mut acc = 0.0;
            let mut grad_z = Vec::with_capacity(streams.len());
            let mut grad_logits = Vec::with_capacity(streams.len());
            for (i, s) in streams.iter().enumerate() {
                let logits = s
                    .logits
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("UniCat stream {i} has no classifier")))?;
                let c = combined_loss(&s.z, logits, labels, cfg)?;
                loss += c.loss;
                parts.push(c.loss);
                acc += accuracy(logits, labels);
                grad_z.push(c.grad_z);
                grad_logits.push(Some(c.grad_logits));
            }
            Ok(StrategyLoss {
                loss,
                parts,
                accuracy: acc / streams.len() as f64,
                grads: StrategyGrads {
                    stream_grad_z: grad_z,
                    stream_grad_logits: grad_logits,
                    fused: None,
                },
            })
        }
        Some(op) => {
            let (head, fwd) = fused.ok_or_else(|| {
                Error::Config(format!("strategy {strategy} requires a fused head"))
            })?;
            if head.op != op {
                return Err(Error::Config(format!(
                    "fused head operator {:?} does not match strategy {strategy}",
                    head.op
                )));
            }
            let logits = fwd
                .out
                .logits
                .as_ref()
                .ok_or_else(|| Error::Config("fused head has no classifier".into()))?;
            let c = combined_loss(&fwd.z_fuse, logits, labels, cfg)?;
            let (grad_from_ce, head_grads) = head.head.backward(&fwd.out, &c.grad_logits)?;
            let grad_fuse = c.grad_z.add(&grad_from_ce)?;
            let dims: Vec<usize> = streams.iter().map(|s| s.z.cols()).collect();
            let stream_grad_z = fuse_backward(&grad_fuse, &dims, op)?;
            Ok(StrategyLoss {
                loss: c.loss,
                parts: vec![c.loss],
                accuracy: accuracy(logits, labels),
                grads: StrategyGrads {
                    stream_grad_z,
                    stream_grad_logits: vec![None; streams.len()],
                    fused: Some(head_grads),
                },
            })
        }
    }
}
