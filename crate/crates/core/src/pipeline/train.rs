use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Architecture, ModelGrads, ModelParams, StreamParams};
use crate::numerics::{Matrix, Rng};
use crate::objectives::{fuse, strategy_loss, FusedForward, LossConfig, Strategy};
use crate::synthdata::{MultimodalDataset, Split};

use super::{lr_at, pk_sample, sgd_step, OptState};

fn default_p() -> usize {
    16
}
fn default_k() -> usize {
    4
}
fn default_lr() -> f64 {
    0.02
}
fn default_momentum() -> f64 {
    0.9
}
fn default_epochs() -> usize {
    200
}
fn default_warmup() -> usize {
    10
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_embed() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Identities per batch (P).
    #[serde(default = "default_p")]
    pub p: usize,
    /// Samples per identity (K).
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_lr")]
    pub lr_base: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        Self {
            strategy,
            p: default_p(),
            k: default_k(),
            lr_base: default_lr(),
            momentum: default_momentum(),
            epochs: default_epochs(),
            warmup_epochs: default_warmup(),
            loss: LossConfig::default(),
            hidden: default_hidden(),
            embed_dim: default_embed(),
            seed,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden: self.hidden.clone(),
            embed_dim: self.embed_dim,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.p < 2 || self.k < 2 {
            return bad("p and k must both be at least 2");
        }
        if !(self.lr_base.is_finite() && self.lr_base > 0.0) {
            return bad("lr_base must be positive");
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad("need warmup_epochs < epochs");
        }
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        self.loss.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Hex SHA-256 of the canonical JSON serialization of any config value.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configs serialize");
    hex::encode(Sha256::digest(&json))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub epoch_loss: Vec<f64>,
    pub epoch_lr: Vec<f64>,
    /// Mean batch classification accuracy per epoch.
    pub epoch_accuracy: Vec<f64>,
    pub model: ModelParams,
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
}

/// Training identities mapped to classifier labels `0..C` in ascending id order.
pub fn train_label_map(ds: &MultimodalDataset) -> BTreeMap<u64, usize> {
    ds.ids_in(Split::Train)
        .into_iter()
        .enumerate()
        .map(|(c, id)| (id, c))
        .collect()
}

/// Trains on the train split of `ds`. Stream `i` is initialized from tag `i`.
pub fn train(ds: &MultimodalDataset, cfg: &TrainConfig) -> Result<RunRecord> {
    let tags: Vec<usize> = (0..ds.num_modalities()).collect();
    train_with_stream_tags(ds, cfg, &tags)
}

/// As [`train`], with explicit initialization tags per stream. Training a
/// single-modality slice of a dataset with tag `i` reproduces stream `i` of a
/// UniCat model trained on the full dataset.
pub fn train_with_stream_tags(
    ds: &MultimodalDataset,
    cfg: &TrainConfig,
    stream_tags: &[usize],
) -> Result<RunRecord> {
    cfg.validate()?;
    ds.validate()?;
    let label_map = train_label_map(ds);
    let train_idx = ds.indices(Split::Train);
    let labels: Vec<usize> = train_idx.iter().map(|&i| label_map[&ds.ids[i]]).collect();
    let num_ids = label_map.len();
    if num_ids < cfg.p {
        return Err(Error::Config(format!(
            "p = {} exceeds the {num_ids} training identities",
            cfg.p
        )));
    }

    let mut model = ModelParams::init(
        cfg.strategy,
        &ds.input_dims(),
        stream_tags,
        &cfg.architecture(),
        num_ids,
        cfg.seed,
    )?;
    let train_x: Vec<_> = ds
        .modalities
        .iter()
        .map(|m| m.features.select_rows(&train_idx))
        .collect();

    let mut batch_rng = Rng::split(cfg.seed, "pipeline/batches");
    let mut opt = OptState::default();
    let batches_per_epoch = train_idx.len().div_ceil(cfg.batch_size());
    let mut record = RunRecord {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        epoch_lr: Vec::with_capacity(cfg.epochs),
        epoch_accuracy: Vec::with_capacity(cfg.epochs),
        model: model.clone(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.lr_base, cfg.epochs, cfg.warmup_epochs)?;
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        for _ in 0..batches_per_epoch {
            let batch = pk_sample(&labels, cfg.p, cfg.k, &mut batch_rng)?;
            let y: Vec<usize> = batch.iter().map(|&b| labels[b]).collect();
            let (loss, acc) = train_step(&mut model, &train_x, &batch, &y, cfg, lr, &mut opt)?;
            loss_sum += loss;
            acc_sum += acc;
        }
        let mean_loss = loss_sum / batches_per_epoch as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        record.epoch_loss.push(mean_loss);
        record.epoch_lr.push(lr);
        record
            .epoch_accuracy
            .push(acc_sum / batches_per_epoch as f64);
    }
    if !model.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    record.model = model;
    Ok(record)
}

/// One forward/backward/update on a batch. Returns `(loss, accuracy)`.
/// Loss, batch accuracy and parameter gradients of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchObjective {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: ModelGrads,
}

/// Train-mode forward pass, strategy loss and backward pass on one batch
/// (`batch_x[i]` feeds stream `i`). Updates BNNeck running statistics but no
/// parameters.
pub fn batch_objective(
    model: &mut ModelParams,
    batch_x: &[Matrix],
    labels: &[usize],
    loss: &LossConfig,
) -> Result<BatchObjective> {
    if batch_x.len() != model.num_streams() {
        return Err(Error::Shape(format!(
            "{} inputs for {} streams",
            batch_x.len(),
            model.num_streams()
        )));
    }
    let outs = model
        .streams
        .iter_mut()
        .zip(batch_x)
        .map(|(s, x)| s.forward_train(x))
        .collect::<Result<Vec<_>>>()?;
    let fused_fwd = match &mut model.fused {
        None => None,
        Some(f) => {
            let zs: Vec<_> = outs.iter().map(|o| &o.z).collect();
            let z_fuse = fuse(&zs, f.op, false)?;
            let out = f.head.forward_train(&z_fuse)?;
            Some(FusedForward { z_fuse, out })
        }
    };
    let sl = strategy_loss(
        &outs,
        model.fused.as_ref().zip(fused_fwd.as_ref()),
        labels,
        model.strategy,
        loss,
    )?;
    let stream_grads = model
        .streams
        .iter()
        .zip(&outs)
        .zip(
            sl.grads
                .stream_grad_z
                .iter()
                .zip(&sl.grads.stream_grad_logits),
        )
        .map(|((s, o), (gz, gl)): ((&StreamParams, _), _)| s.backward(o, gz, gl.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchObjective {
        loss: sl.loss,
        accuracy: sl.accuracy,
        grads: ModelGrads {
            streams: stream_grads,
            fused: sl.grads.fused,
        },
    })
}

fn train_step(
    model: &mut ModelParams,
    train_x: &[Matrix],
    batch: &[usize],
    y: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    opt: &mut OptState,
) -> Result<(f64, f64)> {
    let batch_x: Vec<Matrix> = train_x.iter().map(|x| x.select_rows(batch)).collect();
    let obj = batch_objective(model, &batch_x, y, &cfg.loss)?;
    let grad_slices = obj.grads.slices();
    let mut params = model.param_slices_mut();
    sgd_step(&mut params, &grad_slices, opt, lr, cfg.momentum)?;
    Ok((obj.loss, obj.accuracy))
}
