//! The `gen`, `train`, `eval` and `repro` subcommands.
//!
//! Every file written here is a pure function of the inputs: no timestamps,
//! no absolute paths, fixed float formatting. Each output carries the hash of
//! the configuration that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalkit::{
    claims_text, eval_multimodal, eval_unimodal, evaluate_sets, per_query_csv, per_seed_csv,
    report_markdown, report_summary_csv, run_suite, table_csv, table_markdown, trainset_retrieval,
    EmbeddingSet, FusionFlags, RetrievalReport, Suite, SuiteResult, SuiteSpec,
};
use crate::model::{read_checkpoint, write_checkpoint, ModelParams};
use crate::numerics::Matrix;
use crate::objectives::{fuse, FusionOperator, Strategy};
use crate::pipeline::{config_hash, grid_search, train, RunRecord, TrainConfig};
use crate::synthdata::{generate, Modality, MultimodalDataset, Split, SynthConfig};

use super::config::{DataConfig, ExperimentConfig};
use super::embfile::EmbeddingFile;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub data: DataConfig,
    pub synth: SynthConfig,
    /// One embedding file per generated modality, relative to the manifest.
    pub files: Vec<String>,
    pub splits: Vec<Split>,
}

/// Writes the raw synthetic features of every modality plus a manifest.
/// Replication (if configured) is not materialized on disk; it is reapplied
/// by [`load_dataset_dir`].
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let synth = cfg.data.synth_config()?;
    let ds = generate(&synth)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (i, m) in ds.modalities.iter().enumerate() {
        let name = format!("{i}-{}.uceb", m.name);
        EmbeddingFile::new(
            m.name.clone(),
            ds.ids.clone(),
            ds.views.clone(),
            m.features.clone(),
        )?
        .save(&out.join(&name))?;
        files.push(name);
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config_hash: cfg.hash(),
        data: cfg.data.clone(),
        synth,
        files,
        splits: ds.splits.clone(),
    };
    write(&out.join(MANIFEST_FILE), json(&manifest))?;
    Ok(manifest)
}

/// Loads a directory written by [`cmd_gen`]. Features come back rounded to
/// `f32`.
pub fn load_dataset_dir(dir: &Path) -> Result<(Manifest, MultimodalDataset)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let mut modalities = Vec::new();
    let mut labels: Option<(Vec<u64>, Vec<u32>)> = None;
    for name in &manifest.files {
        let f = EmbeddingFile::load(&dir.join(name))?;
        match &labels {
            None => labels = Some((f.ids.clone(), f.views.clone())),
            Some((ids, views)) => {
                if *ids != f.ids || *views != f.views {
                    return Err(Error::Format(format!(
                        "{name}: sample ids/views differ from the first modality file"
                    )));
                }
            }
        }
        modalities.push(Modality {
            name: f.modality,
            features: f.features,
        });
    }
    let (ids, views) =
        labels.ok_or_else(|| Error::Format("manifest lists no modality files".into()))?;
    if manifest.splits.len() != ids.len() {
        return Err(Error::Format(format!(
            "manifest has {} split tags for {} samples",
            manifest.splits.len(),
            ids.len()
        )));
    }
    let ds = MultimodalDataset {
        modalities,
        ids,
        views,
        splits: manifest.splits.clone(),
    };
    ds.validate()?;
    let ds = manifest.data.finish(ds)?;
    Ok((manifest, ds))
}

/// Command-line overrides applied to a config before it is hashed.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.strategy {
            cfg.train.strategy = s;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        cfg.validate()
    }
}

#[derive(Serialize)]
struct RunSnapshot<'a> {
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    /// The training configuration that produced this directory's model.
    run: &'a TrainConfig,
    run_hash: &'a str,
}

fn loss_csv(record: &RunRecord, config_hash: &str) -> String {
    let mut out = String::from("epoch,lr,loss,accuracy,config_hash\n");
    for e in 0..record.epoch_loss.len() {
        out.push_str(&format!(
            "{e},{:e},{:e},{:e},{config_hash}\n",
            record.epoch_lr[e], record.epoch_loss[e], record.epoch_accuracy[e]
        ));
    }
    out
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let snapshot = RunSnapshot {
        config_hash: &hash,
        config: cfg,
        run: &record.config,
        run_hash: &record.config_hash,
    };
    write(&dir.join("config.json"), json(&snapshot))?;
    write(&dir.join("loss.csv"), loss_csv(record, &hash))?;
    let mut ckpt = Vec::new();
    write_checkpoint(&record.model, &mut ckpt)?;
    write(&dir.join("model.ckpt"), ckpt)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCellSummary {
    pub dir: String,
    pub batch_size: usize,
    pub lr_base: f64,
    pub val_map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSelection {
    pub config_hash: String,
    pub best: usize,
    pub cells: Vec<GridCellSummary>,
}

#[derive(Debug)]
pub enum TrainOutcome {
    Single(Box<RunRecord>),
    Grid {
        best: Box<RunRecord>,
        selection: GridSelection,
    },
}

impl TrainOutcome {
    pub fn record(&self) -> &RunRecord {
        match self {
            TrainOutcome::Single(r) => r,
            TrainOutcome::Grid { best, .. } => best,
        }
    }
}

/// Trains on `data_dir` (a [`cmd_gen`] output) if given, else on data
/// generated from the config. With a grid, every cell gets its own
/// subdirectory and the selected cell is also written to `out` itself.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data_dir: Option<&Path>,
    out: &Path,
) -> Result<TrainOutcome> {
    let ds = match data_dir {
        Some(d) => load_dataset_dir(d)?.1,
        None => cfg.data.build()?,
    };
    fs::create_dir_all(out)?;
    match &cfg.grid {
        None => {
            let record = train(&ds, &cfg.train)?;
            write_run(out, cfg, &record)?;
            Ok(TrainOutcome::Single(Box::new(record)))
        }
        Some(grid) => {
            let result = grid_search(&ds, &cfg.train, grid)?;
            let mut cells = Vec::new();
            for (i, cell) in result.cells.iter().enumerate() {
                let dir = format!("cell-{i:02}-b{}-lr{}", cell.batch_size, cell.lr_base);
                write_run(&out.join(&dir), cfg, &cell.record)?;
                cells.push(GridCellSummary {
                    dir,
                    batch_size: cell.batch_size,
                    lr_base: cell.lr_base,
                    val_map: cell.val_map,
                });
            }
            let selection = GridSelection {
                config_hash: cfg.hash(),
                best: result.best,
                cells,
            };
            write(&out.join("selection.json"), json(&selection))?;
            let best = result.best_record().clone();
            write_run(out, cfg, &best)?;
            Ok(TrainOutcome::Grid {
                best: Box::new(best),
                selection,
            })
        }
    }
}

/// Where `eval` gets its dataset from.
#[derive(Clone, Debug)]
pub enum DatasetSource {
    Config(Box<ExperimentConfig>),
    Dir(PathBuf),
}

#[derive(Clone, Debug)]
pub enum EvalInput {
    Model {
        checkpoint: PathBuf,
        dataset: DatasetSource,
        /// Evaluate each stream on the training identities instead.
        trainset: bool,
        /// Seeds the train-set query/gallery split.
        seed: u64,
    },
    /// Pre-computed embeddings, one `(query, gallery)` file pair per modality.
    External {
        queries: Vec<PathBuf>,
        galleries: Vec<PathBuf>,
        op: FusionOperator,
    },
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FlagOverrides {
    pub normalize_first: Option<bool>,
    pub exclude_same_view: Option<bool>,
    pub max_rank: Option<usize>,
}

impl FlagOverrides {
    fn apply(&self, mut flags: FusionFlags) -> FusionFlags {
        if let Some(v) = self.normalize_first {
            flags.normalize_first = v;
        }
        if let Some(v) = self.exclude_same_view {
            flags.exclude_same_view = v;
        }
        if let Some(v) = self.max_rank {
            flags.max_rank = v;
        }
        flags
    }
}

#[derive(Serialize)]
struct EvalSnapshot {
    mode: &'static str,
    inputs_sha256: Vec<String>,
    dataset_config_hash: Option<String>,
    flags: FusionFlags,
    seed: Option<u64>,
    op: Option<FusionOperator>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Named reports and the hash of the evaluation snapshot.
#[derive(Debug)]
pub struct EvalOutput {
    pub model_label: String,
    pub reports: Vec<(String, RetrievalReport)>,
    pub config_hash: String,
}

fn check_dims(model: &ModelParams, ds: &MultimodalDataset) -> Result<()> {
    if model.num_streams() != ds.num_modalities() {
        return Err(Error::Shape(format!(
            "checkpoint has {} streams but the dataset has {} modalities",
            model.num_streams(),
            ds.num_modalities()
        )));
    }
    for (i, (s, m)) in model.streams.iter().zip(&ds.modalities).enumerate() {
        if s.input_dim() != m.features.cols() {
            return Err(Error::Shape(format!(
                "stream {i} expects {}-dimensional input, modality {:?} has {}",
                s.input_dim(),
                m.name,
                m.features.cols()
            )));
        }
    }
    Ok(())
}

fn query_ids(ds: &MultimodalDataset) -> Vec<u64> {
    ds.indices(Split::Query)
        .into_iter()
        .map(|i| ds.ids[i])
        .collect()
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_reports(out: &Path, output: &EvalOutput, qids: &[Vec<u64>]) -> Result<()> {
    fs::create_dir_all(out)?;
    let rows: Vec<(String, &RetrievalReport)> =
        output.reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    let mut md = report_markdown(&output.model_label, &rows);
    md.push_str(&format!("\nconfig hash: `{}`\n", output.config_hash));
    write(&out.join("report.md"), md)?;
    write(
        &out.join("summary.csv"),
        report_summary_csv(&rows, &output.config_hash),
    )?;
    for ((name, r), ids) in output.reports.iter().zip(qids) {
        write(
            &out.join(format!("ap-{}.csv", file_safe(name))),
            per_query_csv(r, ids),
        )?;
    }
    Ok(())
}

/// Multimodal plus per-stream reports for a checkpoint, or per-modality (and
/// fused, for more than one modality) reports for external embeddings.
pub fn cmd_eval(input: &EvalInput, overrides: &FlagOverrides, out: &Path) -> Result<EvalOutput> {
    let (output, qids, snapshot) = match input {
        EvalInput::Model {
            checkpoint,
            dataset,
            trainset,
            seed,
        } => {
            let model = read_checkpoint(fs::File::open(checkpoint)?)?;
            let (ds, base_flags, ds_hash) = match dataset {
                DatasetSource::Config(cfg) => (cfg.data.build()?, cfg.eval, cfg.hash()),
                DatasetSource::Dir(d) => {
                    let (m, ds) = load_dataset_dir(d)?;
                    (ds, None, m.config_hash)
                }
            };
            check_dims(&model, &ds)?;
            let flags = overrides
                .apply(base_flags.unwrap_or_else(|| FusionFlags::for_strategy(model.strategy)));
            let names: Vec<String> = ds.modalities.iter().map(|m| m.name.clone()).collect();
            let mut reports = Vec::new();
            let mut qids = Vec::new();
            if *trainset {
                let tr = trainset_retrieval(&ds, *seed)?;
                for (i, name) in names.iter().enumerate() {
                    reports.push((
                        format!("{name} (train)"),
                        eval_unimodal(&model, &tr, i, &flags)?,
                    ));
                    qids.push(query_ids(&tr));
                }
            } else {
                reports.push((
                    "multimodal".to_string(),
                    eval_multimodal(&model, &ds, &flags)?,
                ));
                qids.push(query_ids(&ds));
                for (i, name) in names.iter().enumerate() {
                    reports.push((name.clone(), eval_unimodal(&model, &ds, i, &flags)?));
                    qids.push(query_ids(&ds));
                }
            }
            let snapshot = EvalSnapshot {
                mode: if *trainset { "trainset" } else { "test" },
                inputs_sha256: vec![sha256_file(checkpoint)?],
                dataset_config_hash: Some(ds_hash),
                flags,
                seed: trainset.then_some(*seed),
                op: None,
            };
            let label = model.strategy.display_name().to_string();
            (
                EvalOutput {
                    model_label: label,
                    reports,
                    config_hash: String::new(),
                },
                qids,
                snapshot,
            )
        }
        EvalInput::External {
            queries,
            galleries,
            op,
        } => {
            let flags = overrides.apply(FusionFlags {
                normalize_first: true,
                ..FusionFlags::for_strategy(Strategy::UniCat)
            });
            let (reports, qids) = eval_external(queries, galleries, *op, &flags)?;
            let mut hashes = Vec::new();
            for p in queries.iter().chain(galleries) {
                hashes.push(sha256_file(p)?);
            }
            let snapshot = EvalSnapshot {
                mode: "external",
                inputs_sha256: hashes,
                dataset_config_hash: None,
                flags,
                seed: None,
                op: Some(*op),
            };
            (
                EvalOutput {
                    model_label: "external".into(),
                    reports,
                    config_hash: String::new(),
                },
                qids,
                snapshot,
            )
        }
    };
    let hash = config_hash(&snapshot);
    let output = EvalOutput {
        config_hash: hash.clone(),
        ..output
    };
    fs::create_dir_all(out)?;
    write(
        &out.join("eval.json"),
        json(&serde_json::json!({ "config_hash": hash, "eval": snapshot })),
    )?;
    write_reports(out, &output, &qids)?;
    Ok(output)
}

type NamedReports = (Vec<(String, RetrievalReport)>, Vec<Vec<u64>>);

fn eval_external(
    queries: &[PathBuf],
    galleries: &[PathBuf],
    op: FusionOperator,
    flags: &FusionFlags,
) -> Result<NamedReports> {
    if queries.is_empty() || queries.len() != galleries.len() {
        return Err(Error::Config(format!(
            "external evaluation needs matching query/gallery file lists, got {} and {}",
            queries.len(),
            galleries.len()
        )));
    }
    let load_all = |paths: &[PathBuf]| {
        paths
            .iter()
            .map(|p| EmbeddingFile::load(p))
            .collect::<Result<Vec<_>>>()
    };
    let qs = load_all(queries)?;
    let gs = load_all(galleries)?;
    for (i, (q, g)) in qs.iter().zip(&gs).enumerate() {
        if q.dim() != g.dim() {
            return Err(Error::Shape(format!(
                "modality {i}: query features are {}-dimensional, gallery {}",
                q.dim(),
                g.dim()
            )));
        }
        if q.modality != g.modality {
            return Err(Error::Format(format!(
                "pair {i}: query file is modality {:?}, gallery file {:?}",
                q.modality, g.modality
            )));
        }
        let (q0, g0) = (&qs[0], &gs[0]);
        if q.ids != q0.ids || q.views != q0.views || g.ids != g0.ids || g.views != g0.views {
            return Err(Error::Format(format!(
                "modality {:?} lists different samples than {:?}",
                q.modality, q0.modality
            )));
        }
    }
    let set = |f: &EmbeddingFile, features: Matrix, tag: Split| {
        EmbeddingSet::new(features, f.ids.clone(), f.views.clone(), tag)
    };
    let mut reports = Vec::new();
    let mut qids = Vec::new();
    for (q, g) in qs.iter().zip(&gs) {
        let r = evaluate_sets(
            &set(q, q.features.clone(), Split::Query)?,
            &set(g, g.features.clone(), Split::Gallery)?,
            flags.exclude_same_view,
            flags.max_rank,
        )?;
        reports.push((q.modality.clone(), r));
        qids.push(q.ids.clone());
    }
    if qs.len() > 1 {
        let fq = fuse(
            &qs.iter().map(|f| &f.features).collect::<Vec<_>>(),
            op,
            flags.normalize_first,
        )?;
        let fg = fuse(
            &gs.iter().map(|f| &f.features).collect::<Vec<_>>(),
            op,
            flags.normalize_first,
        )?;
        let r = evaluate_sets(
            &set(&qs[0], fq, Split::Query)?,
            &set(&gs[0], fg, Split::Gallery)?,
            flags.exclude_same_view,
            flags.max_rank,
        )?;
        reports.insert(0, ("multimodal".into(), r));
        qids.insert(0, qs[0].ids.clone());
    }
    Ok((reports, qids))
}

#[derive(Serialize)]
struct ReproSnapshot<'a> {
    config_hash: &'a str,
    spec: &'a SuiteSpec,
    seeds: &'a [u64],
}

/// Runs a suite and writes `table.md`, `table.csv`, `per_seed.csv`,
/// `claims.txt` and `config.json` to `out`.
pub fn cmd_repro(
    suite: Suite,
    seeds: &[u64],
    epochs: Option<usize>,
    out: &Path,
) -> Result<SuiteResult> {
    let mut spec = suite.spec();
    if let Some(e) = epochs {
        spec.train.epochs = e;
        spec.train.warmup_epochs = spec.train.warmup_epochs.min(e);
    }
    let hash = config_hash(&(&spec, seeds));
    let result = run_suite(&spec, seeds)?;
    fs::create_dir_all(out)?;
    let claims = claims_text(&result.claims);
    let mut md = table_markdown(&result.table);
    md.push('\n');
    md.push_str(&claims);
    md.push_str(&format!("\nconfig hash: `{hash}`\n"));
    write(&out.join("table.md"), md)?;
    write(&out.join("table.csv"), table_csv(&result.table, &hash))?;
    write(
        &out.join("per_seed.csv"),
        per_seed_csv(&result.outcomes, &result.table.stream_names),
    )?;
    write(&out.join("claims.txt"), claims)?;
    write(
        &out.join("config.json"),
        json(&ReproSnapshot {
            config_hash: &hash,
            spec: &spec,
            seeds,
        }),
    )?;
    Ok(result)
}
