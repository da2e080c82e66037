//! Retrieval evaluation (cosine distance, CMC, mAP) and the experiment
//! evaluators built on it.

mod experiments;
mod metrics;
mod report;
mod suites;

pub use experiments::{
    embed_dataset, eval_multimodal, eval_trainset, eval_unimodal, trainset_retrieval, FusionFlags,
    DEFAULT_MAX_RANK,
};
pub use metrics::{
    cmc_map, cosine_distance, cosine_similarity, evaluate_sets, EmbeddingSet, RetrievalReport,
};
pub use report::{
    claims_text, per_query_csv, per_seed_csv, report_markdown, report_summary_csv, table_csv,
    table_markdown, REPORT_CSV_VERSION,
};
pub use suites::{
    claim_ensemble, claim_trainset_laziness, claim_unimodal_laziness, claim_weak_rescue,
    required_seeds, run_suite, suite_claims, suite_train_config, Claim, ExperimentTable, Metric,
    Replication, SeedOutcome, StrategyOutcome, Suite, SuiteResult, SuiteSpec, TableRow,
    ENSEMBLE_TRAIN_IDS, WEAK_STREAM,
};
