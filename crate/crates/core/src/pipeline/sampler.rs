use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One PK batch: `p` distinct labels drawn without replacement, `k` samples
/// of each (with replacement only for labels owning fewer than `k` samples).
/// Returns positions into `labels`, grouped by label.
pub fn pk_sample(labels: &[usize], p: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    if by_label.len() < p {
        return Err(Error::Sampling(format!(
            "need {p} distinct identities, only {} available",
            by_label.len()
        )));
    }
    let mut ids: Vec<usize> = by_label.keys().copied().collect();
    rng.shuffle(&mut ids);
    let mut batch = Vec::with_capacity(p * k);
    for id in &ids[..p] {
        let members = &by_label[id];
        if members.len() >= k {
            let mut m = members.clone();
            rng.shuffle(&mut m);
            batch.extend_from_slice(&m[..k]);
        } else {
            for _ in 0..k {
                batch.push(members[rng.index(members.len())]);
            }
        }
    }
    Ok(batch)
}
