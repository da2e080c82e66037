//! Multi-seed experiment suites and their directional claims.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::derive_seed;
use crate::objectives::Strategy;
use crate::pipeline::{train, TrainConfig};
use crate::synthdata::{generate, replicate_modality, SynthConfig};

use super::experiments::{eval_multimodal, eval_trainset, eval_unimodal, FusionFlags};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Suite {
    #[serde(rename = "laziness-clean")]
    LazinessClean,
    #[serde(rename = "weak-link")]
    WeakLink,
    #[serde(rename = "ensemble")]
    Ensemble,
    #[serde(rename = "train-vs-test")]
    TrainVsTest,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::LazinessClean,
        Suite::WeakLink,
        Suite::Ensemble,
        Suite::TrainVsTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::LazinessClean => "laziness-clean",
            Suite::WeakLink => "weak-link",
            Suite::Ensemble => "ensemble",
            Suite::TrainVsTest => "train-vs-test",
        }
    }

    /// Committed configuration of the suite.
    pub fn spec(self) -> SuiteSpec {
        let train = suite_train_config();
        match self {
            Suite::LazinessClean => SuiteSpec {
                suite: self,
                data: SynthConfig::clean(0),
                train,
                replicate: None,
                eval_trainset: false,
            },
            Suite::WeakLink => SuiteSpec {
                suite: self,
                data: SynthConfig::weak_link(0),
                train,
                replicate: None,
                eval_trainset: false,
            },
            Suite::Ensemble => SuiteSpec {
                suite: self,
                data: SynthConfig {
                    ids_train: ENSEMBLE_TRAIN_IDS,
                    ..SynthConfig::clean(0)
                },
                train,
                replicate: Some(Replication {
                    modality: 0,
                    copies: 2,
                }),
                eval_trainset: false,
            },
            Suite::TrainVsTest => SuiteSpec {
                suite: self,
                data: SynthConfig::clean(0),
                train,
                replicate: None,
                eval_trainset: true,
            },
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown suite {s:?}; expected one of laziness-clean, weak-link, ensemble, train-vs-test"
                ))
            })
    }
}

/// The ensemble suite trains on more identities than the clean preset: with
/// few identities a jointly trained wide model matches the two-member
/// ensemble, and the ensemble's advantage only separates from seed noise as
/// the training set grows.
pub const ENSEMBLE_TRAIN_IDS: usize = 120;

/// Training recipe shared by all suites.
pub fn suite_train_config() -> TrainConfig {
    TrainConfig::new(Strategy::UniCat, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Replication {
    pub modality: usize,
    pub copies: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub suite: Suite,
    /// Data recipe; its seed is replaced per suite seed.
    pub data: SynthConfig,
    /// Training recipe; strategy and seed are replaced per cell.
    pub train: TrainConfig,
    pub replicate: Option<Replication>,
    pub eval_trainset: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub map: f64,
    pub rank1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub multimodal: Metric,
    pub test_streams: Vec<Metric>,
    /// Empty unless the suite evaluates the training set.
    pub train_streams: Vec<Metric>,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub strategies: Vec<StrategyOutcome>,
}

impl SeedOutcome {
    pub fn get(&self, s: Strategy) -> &StrategyOutcome {
        self.strategies
            .iter()
            .find(|o| o.strategy == s)
            .expect("every suite runs all strategies")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub strategy: Strategy,
    /// `"multimodal"` or a stream name.
    pub evaluated: String,
    /// `"test"` or `"train"`.
    pub split: String,
    pub map_mean: f64,
    pub map_std: f64,
    pub rank1_mean: f64,
    pub rank1_std: f64,
}

/// Mean and sample standard deviation over seeds, one row per
/// `(strategy, evaluated stream)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub suite: Suite,
    pub seeds: Vec<u64>,
    pub stream_names: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Claim {
    pub name: String,
    pub description: String,
    pub satisfied_seeds: usize,
    pub total_seeds: usize,
    pub required_seeds: usize,
    pub passed: bool,
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}/{} seeds (need {}) - {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.satisfied_seeds,
            self.total_seeds,
            self.required_seeds,
            self.description
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub spec: SuiteSpec,
    pub outcomes: Vec<SeedOutcome>,
    pub table: ExperimentTable,
    pub claims: Vec<Claim>,
}

/// Seeds that must agree for a directional claim: four of five, scaled.
pub fn required_seeds(total: usize) -> usize {
    (4 * total).div_ceil(5)
}

fn claim(
    name: &str,
    description: &str,
    outcomes: &[SeedOutcome],
    holds: impl Fn(&SeedOutcome) -> bool,
) -> Claim {
    let satisfied = outcomes.iter().filter(|o| holds(o)).count();
    let required = required_seeds(outcomes.len());
    Claim {
        name: name.into(),
        description: description.into(),
        satisfied_seeds: satisfied,
        total_seeds: outcomes.len(),
        required_seeds: required,
        passed: satisfied >= required,
    }
}

/// UniCat's test mAP strictly exceeds both fusion strategies on every stream.
pub fn claim_unimodal_laziness(outcomes: &[SeedOutcome]) -> Claim {
    claim(
        "unicat-beats-fusion-per-stream",
        "per-stream test mAP: UniCat > Fusion-avg and UniCat > Fusion-concat for every stream",
        outcomes,
        |o| {
            let u = o.get(Strategy::UniCat);
            [Strategy::FusionAvg, Strategy::FusionConcat]
                .iter()
                .all(|&f| {
                    let f = o.get(f);
                    u.test_streams
                        .iter()
                        .zip(&f.test_streams)
                        .all(|(a, b)| a.map > b.map)
                })
        },
    )
}

/// Fusion-concat's weak-stream test mAP exceeds UniCat's.
pub fn claim_weak_rescue(outcomes: &[SeedOutcome], weak_stream: usize) -> Claim {
    claim(
        "fusion-concat-rescues-weak-stream",
        "weak-stream test mAP: Fusion-concat > UniCat",
        outcomes,
        |o| {
            o.get(Strategy::FusionConcat).test_streams[weak_stream].map
                > o.get(Strategy::UniCat).test_streams[weak_stream].map
        },
    )
}

/// Train-set per-stream mAP under both fusion strategies is below UniCat's.
pub fn claim_trainset_laziness(outcomes: &[SeedOutcome]) -> Claim {
    claim(
        "fusion-lowers-trainset-map",
        "per-stream train-set mAP: Fusion-avg and Fusion-concat < UniCat for every stream",
        outcomes,
        |o| {
            let u = o.get(Strategy::UniCat);
            [Strategy::FusionAvg, Strategy::FusionConcat]
                .iter()
                .all(|&f| {
                    o.get(f)
                        .train_streams
                        .iter()
                        .zip(&u.train_streams)
                        .all(|(a, b)| a.map < b.map)
                })
        },
    )
}

/// Independently trained ensemble members match or beat joint training.
pub fn claim_ensemble(outcomes: &[SeedOutcome]) -> Claim {
    claim(
        "independent-ensemble-beats-joint",
        "ensemble test mAP: UniCat >= Fusion-avg and UniCat >= Fusion-concat",
        outcomes,
        |o| {
            let u = o.get(Strategy::UniCat).multimodal.map;
            u >= o.get(Strategy::FusionAvg).multimodal.map
                && u >= o.get(Strategy::FusionConcat).multimodal.map
        },
    )
}

/// Index of the weak modality in the weak-link preset.
pub const WEAK_STREAM: usize = 1;

fn run_cell(spec: &SuiteSpec, seed: u64, strategy: Strategy) -> Result<StrategyOutcome> {
    let mut data = spec.data.clone();
    data.seed = derive_seed(seed, "suite/data");
    let mut ds = generate(&data)?;
    if let Some(r) = spec.replicate {
        ds = replicate_modality(&ds, r.modality, r.copies)?;
    }
    let mut cfg = spec.train.clone();
    cfg.strategy = strategy;
    cfg.seed = seed;
    let record = train(&ds, &cfg)?;
    let flags = FusionFlags::for_strategy(strategy);
    let m = &record.model;
    let to_metric = |r: crate::evalkit::RetrievalReport| Metric {
        map: r.map,
        rank1: r.rank1,
    };
    let multimodal = to_metric(eval_multimodal(m, &ds, &flags)?);
    let test_streams = (0..ds.num_modalities())
        .map(|i| eval_unimodal(m, &ds, i, &flags).map(to_metric))
        .collect::<Result<Vec<_>>>()?;
    let train_streams = if spec.eval_trainset {
        (0..ds.num_modalities())
            .map(|i| eval_trainset(m, &ds, i, &flags, seed).map(to_metric))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(StrategyOutcome {
        strategy,
        multimodal,
        test_streams,
        train_streams,
        final_train_loss: *record.epoch_loss.last().unwrap_or(&f64::NAN),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn stream_names(spec: &SuiteSpec) -> Vec<String> {
    match spec.replicate {
        Some(r) => (0..r.copies)
            .map(|c| format!("{}#{c}", spec.data.modalities[r.modality].name))
            .collect(),
        None => spec
            .data
            .modalities
            .iter()
            .map(|m| m.name.clone())
            .collect(),
    }
}

fn aggregate(spec: &SuiteSpec, seeds: &[u64], outcomes: &[SeedOutcome]) -> ExperimentTable {
    let names = stream_names(spec);
    let mut rows = Vec::new();
    let mut push = |strategy: Strategy,
                    evaluated: String,
                    split: &str,
                    pick: &dyn Fn(&StrategyOutcome) -> Metric| {
        let ms: Vec<Metric> = outcomes.iter().map(|o| pick(o.get(strategy))).collect();
        let (map_mean, map_std) = mean_std(&ms.iter().map(|m| m.map).collect::<Vec<_>>());
        let (rank1_mean, rank1_std) = mean_std(&ms.iter().map(|m| m.rank1).collect::<Vec<_>>());
        rows.push(TableRow {
            strategy,
            evaluated,
            split: split.into(),
            map_mean,
            map_std,
            rank1_mean,
            rank1_std,
        });
    };
    for s in Strategy::ALL {
        push(s, "multimodal".into(), "test", &|o| o.multimodal);
        for (i, name) in names.iter().enumerate() {
            push(s, name.clone(), "test", &|o| o.test_streams[i]);
        }
        if spec.eval_trainset {
            for (i, name) in names.iter().enumerate() {
                push(s, name.clone(), "train", &|o| o.train_streams[i]);
            }
        }
    }
    ExperimentTable {
        suite: spec.suite,
        seeds: seeds.to_vec(),
        stream_names: names,
        rows,
    }
}

/// Claims checked by a suite.
pub fn suite_claims(suite: Suite, outcomes: &[SeedOutcome]) -> Vec<Claim> {
    match suite {
        Suite::LazinessClean => vec![claim_unimodal_laziness(outcomes)],
        Suite::WeakLink => vec![claim_weak_rescue(outcomes, WEAK_STREAM)],
        Suite::Ensemble => vec![claim_ensemble(outcomes)],
        Suite::TrainVsTest => vec![claim_trainset_laziness(outcomes)],
    }
}

/// Trains and evaluates every `(seed, strategy)` cell (in parallel), then
/// aggregates in seed order.
pub fn run_suite(spec: &SuiteSpec, seeds: &[u64]) -> Result<SuiteResult> {
    if seeds.is_empty() {
        return Err(Error::Config("a suite needs at least one seed".into()));
    }
    let cells: Vec<(u64, Strategy)> = seeds
        .iter()
        .flat_map(|&s| Strategy::ALL.into_iter().map(move |st| (s, st)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(seed, st)| run_cell(spec, seed, st))
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<SeedOutcome> = seeds
        .iter()
        .zip(results.chunks(Strategy::ALL.len()))
        .map(|(&seed, chunk)| SeedOutcome {
            seed,
            strategies: chunk.to_vec(),
        })
        .collect();
    let table = aggregate(spec, seeds, &outcomes);
    let claims = suite_claims(spec.suite, &outcomes);
    Ok(SuiteResult {
        spec: spec.clone(),
        outcomes,
        table,
        claims,
    })
}
