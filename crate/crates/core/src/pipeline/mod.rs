//! Training orchestration: PK batches, SGD with momentum, warmup + cosine
//! schedule, the per-strategy epoch loop and grid search.

mod grid;
mod optim;
mod sampler;
mod schedule;
mod train;

pub use grid::{grid_search, GridCell, GridResult, GridSpec, VALIDATION_FRACTION};
pub use optim::{sgd_step, OptState};
pub use sampler::pk_sample;
pub use schedule::{lr_at, LR_MIN_FRACTION};
pub use train::{
    batch_objective, config_hash, train, train_label_map, train_with_stream_tags, BatchObjective,
    RunRecord, TrainConfig,
};
