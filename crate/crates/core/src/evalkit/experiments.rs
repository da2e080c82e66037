//! Experiment evaluators: multimodal, per-stream and train-set retrieval.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ModelParams, Selector};
use crate::numerics::Rng;
use crate::objectives::Strategy;
use crate::synthdata::{trainset_as_retrieval, MultimodalDataset, Split};

use super::metrics::{evaluate_sets, EmbeddingSet, RetrievalReport};

pub const DEFAULT_MAX_RANK: usize = 50;

/// Inference-time options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionFlags {
    /// ℓ2-normalize every stream's feature before fusing.
    pub normalize_first: bool,
    pub exclude_same_view: bool,
    pub max_rank: usize,
}

impl FusionFlags {
    pub fn for_strategy(strategy: Strategy) -> Self {
        Self {
            normalize_first: strategy.default_normalize_first(),
            exclude_same_view: false,
            max_rank: DEFAULT_MAX_RANK,
        }
    }
}

/// Retrieval features of the `split` rows of `ds`.
pub fn embed_dataset(
    model: &ModelParams,
    ds: &MultimodalDataset,
    selector: Selector,
    normalize_first: bool,
    split: Split,
) -> Result<EmbeddingSet> {
    let idx = ds.indices(split);
    let sub = ds.subset(&idx);
    let features = model.embed_rows(&sub, selector, normalize_first)?;
    EmbeddingSet::new(features, sub.ids, sub.views, split)
}

fn eval_selector(
    model: &ModelParams,
    ds: &MultimodalDataset,
    selector: Selector,
    flags: &FusionFlags,
) -> Result<RetrievalReport> {
    let q = embed_dataset(model, ds, selector, flags.normalize_first, Split::Query)?;
    let g = embed_dataset(model, ds, selector, flags.normalize_first, Split::Gallery)?;
    evaluate_sets(&q, &g, flags.exclude_same_view, flags.max_rank)
}

/// Query/gallery retrieval with the strategy's fused representation: the
/// fused head for Fusion-avg/concat, concatenated stream features for UniCat.
pub fn eval_multimodal(
    model: &ModelParams,
    ds: &MultimodalDataset,
    flags: &FusionFlags,
) -> Result<RetrievalReport> {
    eval_selector(model, ds, Selector::Fused, flags)
}

/// Query/gallery retrieval with stream `stream_index` alone.
pub fn eval_unimodal(
    model: &ModelParams,
    ds: &MultimodalDataset,
    stream_index: usize,
    flags: &FusionFlags,
) -> Result<RetrievalReport> {
    eval_selector(model, ds, Selector::Stream(stream_index), flags)
}

/// The training identities of `ds` as a query/gallery problem under the test
/// protocol (one query view per identity, seeded by `seed`).
pub fn trainset_retrieval(ds: &MultimodalDataset, seed: u64) -> Result<MultimodalDataset> {
    let mut rng = Rng::split(seed, "evalkit/trainset-split");
    trainset_as_retrieval(ds, 1, &mut rng)
}

/// Unimodal retrieval on the training identities; see [`trainset_retrieval`].
pub fn eval_trainset(
    model: &ModelParams,
    ds: &MultimodalDataset,
    stream_index: usize,
    flags: &FusionFlags,
    seed: u64,
) -> Result<RetrievalReport> {
    eval_unimodal(model, &trainset_retrieval(ds, seed)?, stream_index, flags)
}
