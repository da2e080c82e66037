use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{eval_multimodal, FusionFlags};
use crate::numerics::Rng;
use crate::synthdata::{holdout_validation, MultimodalDataset};

use super::{train, RunRecord, TrainConfig};

/// Fraction of training identities held out for model selection.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Batch sizes `P·K`; `K` is taken from the base config.
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub batch_size: usize,
    pub lr_base: f64,
    pub val_map: f64,
    pub record: RunRecord,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridResult {
    pub fn best_record(&self) -> &RunRecord {
        &self.cells[self.best].record
    }
}

/// Trains every `(batch size, learning rate)` cell on the training identities
/// minus a validation hold-out, and picks the cell with the highest
/// multimodal validation mAP (ties: lower learning rate, then smaller batch).
/// Cells run in parallel; results are ordered batch-major.
pub fn grid_search(
    ds: &MultimodalDataset,
    base: &TrainConfig,
    grid: &GridSpec,
) -> Result<GridResult> {
    if grid.batch_sizes.is_empty() || grid.learning_rates.is_empty() {
        return Err(Error::Config("grid search needs at least one cell".into()));
    }
    let mut configs = Vec::new();
    for &b in &grid.batch_sizes {
        if b % base.k != 0 {
            return Err(Error::Config(format!(
                "batch size {b} is not a multiple of k = {}",
                base.k
            )));
        }
        for &lr in &grid.learning_rates {
            let mut c = base.clone();
            c.p = b / base.k;
            c.lr_base = lr;
            c.validate()?;
            configs.push(c);
        }
    }
    let mut rng = Rng::split(base.seed, "pipeline/grid/holdout");
    let (train_ds, val_ds) = holdout_validation(ds, VALIDATION_FRACTION, &mut rng)?;
    let flags = FusionFlags::for_strategy(base.strategy);

    let cells = configs
        .into_par_iter()
        .map(|c| {
            let record = train(&train_ds, &c)?;
            let report = eval_multimodal(&record.model, &val_ds, &flags)?;
            Ok(GridCell {
                batch_size: c.batch_size(),
                lr_base: c.lr_base,
                val_map: report.map,
                record,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, c) in cells.iter().enumerate().skip(1) {
        let b = &cells[best];
        let better = c.val_map > b.val_map
            || (c.val_map == b.val_map
                && (c.lr_base < b.lr_base
                    || (c.lr_base == b.lr_base && c.batch_size < b.batch_size)));
        if better {
            best = i;
        }
    }
    Ok(GridResult { cells, best })
}
