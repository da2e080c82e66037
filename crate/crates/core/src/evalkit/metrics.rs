use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::synthdata::Split;

/// Embeddings of one evaluation split.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub features: Matrix,
    pub ids: Vec<u64>,
    pub views: Vec<u32>,
    pub tag: Split,
}

impl EmbeddingSet {
    pub fn new(features: Matrix, ids: Vec<u64>, views: Vec<u32>, tag: Split) -> Result<Self> {
        if features.rows() != ids.len() || ids.len() != views.len() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} ids, {} views",
                features.rows(),
                ids.len(),
                views.len()
            )));
        }
        Ok(Self {
            features,
            ids,
            views,
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub map: f64,
    /// `cmc[k − 1]`: fraction of scored queries whose first match is at rank ≤ k.
    pub cmc: Vec<f64>,
    pub rank1: f64,
    /// Average precision per query; `None` for queries without any relevant
    /// gallery entry.
    pub per_query_ap: Vec<Option<f64>>,
    pub num_skipped_queries: usize,
}

fn unit_rows(m: &Matrix, what: &str) -> Result<Matrix> {
    let mut out = m.clone();
    for (r, n) in m.row_norms().into_iter().enumerate() {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateEmbedding(format!(
                "{what} row {r} has norm {n}; cosine distance undefined"
            )));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// `S[i][j] = ⟨q_i, g_j⟩ / (‖q_i‖ ‖g_j‖)`.
pub fn cosine_similarity(q: &Matrix, g: &Matrix) -> Result<Matrix> {
    if q.cols() != g.cols() {
        return Err(Error::Shape(format!(
            "query dim {} vs gallery dim {}",
            q.cols(),
            g.cols()
        )));
    }
    unit_rows(q, "query")?.matmul_t(&unit_rows(g, "gallery")?)
}

/// `D = 1 − cosine similarity`, clamped to `[0, 2]`.
pub fn cosine_distance(q: &EmbeddingSet, g: &EmbeddingSet) -> Result<Matrix> {
    let mut d = cosine_similarity(&q.features, &g.features)?;
    d.data_mut()
        .iter_mut()
        .for_each(|s| *s = (1.0 - *s).clamp(0.0, 2.0));
    Ok(d)
}

/// Single-pass CMC and mAP.
///
/// Each query ranks the gallery by ascending distance, ties broken by gallery
/// index. With `exclude_same_view`, gallery entries sharing both identity and
/// view with the query are dropped before ranking. Average precision is
/// `(1/R) Σ_k hits(≤ k)/k` over the ranks `k` holding matches; queries with
/// `R = 0` are skipped and counted.
pub fn cmc_map(
    dist: &Matrix,
    q_ids: &[u64],
    g_ids: &[u64],
    q_views: &[u32],
    g_views: &[u32],
    exclude_same_view: bool,
    max_rank: usize,
) -> Result<RetrievalReport> {
    let (nq, ng) = dist.shape();
    if q_ids.len() != nq || q_views.len() != nq || g_ids.len() != ng || g_views.len() != ng {
        return Err(Error::Shape(format!(
            "distance matrix {nq}x{ng} does not match label lengths"
        )));
    }
    if max_rank == 0 {
        return Err(Error::Config("max_rank must be positive".into()));
    }
    let mut cmc_hits = vec![0usize; max_rank];
    let mut per_query_ap = Vec::with_capacity(nq);
    let mut ap_sum = 0.0;
    let mut scored = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(ng);
    for q in 0..nq {
        let row = dist.row(q);
        order.clear();
        order.extend(
            (0..ng).filter(|&j| {
                !(exclude_same_view && g_ids[j] == q_ids[q] && g_views[j] == q_views[q])
            }),
        );
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let relevant = order.iter().filter(|&&j| g_ids[j] == q_ids[q]).count();
        if relevant == 0 {
            per_query_ap.push(None);
            continue;
        }
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first = None;
        for (pos, &j) in order.iter().enumerate() {
            if g_ids[j] == q_ids[q] {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
                first.get_or_insert(pos);
                if hits == relevant {
                    break;
                }
            }
        }
        let ap = precision_sum / relevant as f64;
        if let Some(f) = first {
            if f < max_rank {
                cmc_hits[f] += 1;
            }
        }
        ap_sum += ap;
        scored += 1;
        per_query_ap.push(Some(ap));
    }
    if scored == 0 {
        return Err(Error::Evaluation(
            "no query has a relevant gallery entry".into(),
        ));
    }
    let mut cmc = Vec::with_capacity(max_rank);
    let mut acc = 0usize;
    for h in cmc_hits {
        acc += h;
        cmc.push(acc as f64 / scored as f64);
    }
    Ok(RetrievalReport {
        map: ap_sum / scored as f64,
        rank1: cmc[0],
        cmc,
        per_query_ap,
        num_skipped_queries: nq - scored,
    })
}

/// Convenience wrapper: cosine distance between two embedding sets, then [`cmc_map`].
pub fn evaluate_sets(
    q: &EmbeddingSet,
    g: &EmbeddingSet,
    exclude_same_view: bool,
    max_rank: usize,
) -> Result<RetrievalReport> {
    let d = cosine_distance(q, g)?;
    cmc_map(
        &d,
        &q.ids,
        &g.ids,
        &q.views,
        &g.views,
        exclude_same_view,
        max_rank,
    )
}
