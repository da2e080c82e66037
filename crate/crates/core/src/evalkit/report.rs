//! CSV and markdown rendering of retrieval reports and suite tables.
//!
//! Numbers are printed with a fixed number of digits so that output files
//! are byte-identical across runs with the same inputs.

use std::fmt::Write as _;

use super::metrics::RetrievalReport;
use super::suites::{Claim, ExperimentTable, SeedOutcome};

/// Bumped whenever a CSV layout changes.
pub const REPORT_CSV_VERSION: u32 = 1;

fn cmc_at(report: &RetrievalReport, k: usize) -> f64 {
    report
        .cmc
        .get(k - 1)
        .or(report.cmc.last())
        .copied()
        .unwrap_or(0.0)
}

/// One header line and one row per named report.
pub fn report_summary_csv(rows: &[(String, &RetrievalReport)], config_hash: &str) -> String {
    let mut out = String::from(
        "version,evaluated,map,rank1,rank5,rank10,num_queries,num_skipped,config_hash\n",
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{REPORT_CSV_VERSION},{name},{:.6},{:.6},{:.6},{:.6},{},{},{config_hash}",
            r.map,
            r.rank1,
            cmc_at(r, 5),
            cmc_at(r, 10),
            r.per_query_ap.len(),
            r.num_skipped_queries,
        );
    }
    out
}

/// Per-query average precision; skipped queries have an empty `ap` field.
/// The last line repeats the mean over evaluated queries.
pub fn per_query_csv(report: &RetrievalReport, query_ids: &[u64]) -> String {
    let mut out = String::from("query_index,query_id,ap\n");
    for (i, ap) in report.per_query_ap.iter().enumerate() {
        let id = query_ids.get(i).map(|v| v.to_string()).unwrap_or_default();
        match ap {
            Some(ap) => {
                let _ = writeln!(out, "{i},{id},{ap:.6}");
            }
            None => {
                let _ = writeln!(out, "{i},{id},");
            }
        }
    }
    let _ = writeln!(out, "mean,,{:.6}", report.map);
    out
}

/// One-row markdown table: an `mAP`/`Rank-1` column pair (percent) per
/// named report.
pub fn report_markdown(model: &str, rows: &[(String, &RetrievalReport)]) -> String {
    let mut out = String::from("| Model |");
    for (name, _) in rows {
        let _ = write!(out, " {name} mAP | {name} Rank-1 |");
    }
    out.push_str("\n|---|");
    for _ in rows {
        out.push_str("---|---|");
    }
    let _ = write!(out, "\n| {model} |");
    for (_, r) in rows {
        let _ = write!(out, " {:.1} | {:.1} |", 100.0 * r.map, 100.0 * r.rank1);
    }
    out.push('\n');
    out
}

fn pm(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}", 100.0 * mean, 100.0 * std)
}

/// Strategies as rows, one `mAP`/`Rank-1` column pair per evaluated
/// representation, values in percent as `mean ± std` over seeds.
pub fn table_markdown(table: &ExperimentTable) -> String {
    let mut columns: Vec<(String, String)> = Vec::new();
    for r in &table.rows {
        let key = (r.evaluated.clone(), r.split.clone());
        if !columns.contains(&key) {
            columns.push(key);
        }
    }
    let label = |(e, s): &(String, String)| {
        if s == "test" {
            e.clone()
        } else {
            format!("{e} ({s})")
        }
    };
    let mut out = format!(
        "Suite `{}`, seeds {:?}\n\n| Model |",
        table.suite, table.seeds
    );
    for c in &columns {
        let _ = write!(out, " {} mAP | {} Rank-1 |", label(c), label(c));
    }
    out.push_str("\n|---|");
    for _ in &columns {
        out.push_str("---|---|");
    }
    out.push('\n');
    let mut strategies = Vec::new();
    for r in &table.rows {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy);
        }
    }
    for s in strategies {
        let _ = write!(out, "| {} |", s.display_name());
        for c in &columns {
            match table
                .rows
                .iter()
                .find(|r| r.strategy == s && r.evaluated == c.0 && r.split == c.1)
            {
                Some(r) => {
                    let _ = write!(
                        out,
                        " {} | {} |",
                        pm(r.map_mean, r.map_std),
                        pm(r.rank1_mean, r.rank1_std)
                    );
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Long-format table: one line per row of `table`.
pub fn table_csv(table: &ExperimentTable, config_hash: &str) -> String {
    let mut out = String::from(
        "version,suite,strategy,evaluated,split,map_mean,map_std,rank1_mean,rank1_std,num_seeds,config_hash\n",
    );
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{REPORT_CSV_VERSION},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{config_hash}",
            table.suite,
            r.strategy,
            r.evaluated,
            r.split,
            r.map_mean,
            r.map_std,
            r.rank1_mean,
            r.rank1_std,
            table.seeds.len()
        );
    }
    out
}

/// Raw per-seed metrics behind a table.
pub fn per_seed_csv(outcomes: &[SeedOutcome], stream_names: &[String]) -> String {
    let mut out = String::from("seed,strategy,evaluated,split,map,rank1\n");
    for o in outcomes {
        for s in &o.strategies {
            let _ = writeln!(
                out,
                "{},{},multimodal,test,{:.6},{:.6}",
                o.seed, s.strategy, s.multimodal.map, s.multimodal.rank1
            );
            for (split, metrics) in [("test", &s.test_streams), ("train", &s.train_streams)] {
                for (name, m) in stream_names.iter().zip(metrics.iter()) {
                    let _ = writeln!(
                        out,
                        "{},{},{name},{split},{:.6},{:.6}",
                        o.seed, s.strategy, m.map, m.rank1
                    );
                }
            }
        }
    }
    out
}

/// One `PASS`/`FAIL` line per claim.
pub fn claims_text(claims: &[Claim]) -> String {
    claims.iter().map(|c| format!("{c}\n")).collect()
}
