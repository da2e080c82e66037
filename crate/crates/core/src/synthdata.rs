//! Synthetic multimodal re-identification data.
//!
//! Every identity `y` owns a latent code `u_y ~ N(0, I)`. Every view of that
//! identity perturbs the code with shared jitter `δ ~ N(0, κ²I)`, and each
//! modality observes it through its own fixed projection `A_i` (orthonormal
//! columns):
//!
//! ```text
//! x_i = signal_scale_i · A_i (u_y + δ) + σ_i ε,   ε ~ N(0, I)
//! ```
//!
//! A modality may additionally carry `spurious_dim` trailing coordinates. On
//! training identities they hold a fixed per-identity code (learnable but
//! useless later); on test identities they are redrawn independently for every
//! sample.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub obs_dim: usize,
    #[serde(default = "one")]
    pub signal_scale: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub spurious_dim: usize,
    #[serde(default)]
    pub spurious_strength: f64,
}

fn one() -> f64 {
    1.0
}

fn default_query_views() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub modalities: Vec<ModalitySpec>,
    pub latent_dim: usize,
    pub ids_train: usize,
    pub ids_test: usize,
    pub views_per_id: usize,
    #[serde(default)]
    pub view_jitter: f64,
    /// Views of every test identity tagged as query; the rest form the gallery.
    #[serde(default = "default_query_views")]
    pub query_views: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Three equally informative modalities with moderate noise.
    pub fn clean(seed: u64) -> Self {
        let modality = |name: &str| ModalitySpec {
            name: name.into(),
            obs_dim: 32,
            signal_scale: 1.0,
            noise_sigma: 0.5,
            spurious_dim: 0,
            spurious_strength: 0.0,
        };
        Self {
            modalities: vec![modality("rgb"), modality("nir"), modality("tir")],
            latent_dim: 16,
            ids_train: 60,
            ids_test: 150,
            views_per_id: 8,
            view_jitter: 0.2,
            query_views: 1,
            seed,
        }
    }

    /// The clean preset with the second modality turned into a weak link:
    /// twice the observation noise plus train-only identity-correlated
    /// features. Its standalone test mAP is roughly a sixth of the others.
    pub fn weak_link(seed: u64) -> Self {
        let mut cfg = Self::clean(seed);
        let weak = &mut cfg.modalities[1];
        weak.noise_sigma = 1.0;
        weak.spurious_dim = 8;
        weak.spurious_strength = 0.3;
        cfg
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.ids_train < 2 || self.ids_test < 2 {
            return bad("ids_train and ids_test must both be at least 2".into());
        }
        if self.views_per_id < 2 {
            return bad("views_per_id must be at least 2".into());
        }
        if self.query_views == 0 || self.query_views >= self.views_per_id {
            return bad(format!(
                "query_views must lie in 1..{} (views_per_id)",
                self.views_per_id
            ));
        }
        if !(self.view_jitter.is_finite() && self.view_jitter >= 0.0) {
            return bad("view_jitter must be finite and non-negative".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.modalities {
            if !names.insert(m.name.as_str()) {
                return bad(format!("duplicate modality name {:?}", m.name));
            }
            if m.obs_dim < self.latent_dim {
                return bad(format!(
                    "modality {:?}: obs_dim {} is smaller than latent_dim {}",
                    m.name, m.obs_dim, self.latent_dim
                ));
            }
            if !m.signal_scale.is_finite()
                || !(m.noise_sigma.is_finite() && m.noise_sigma >= 0.0)
                || !(m.spurious_strength.is_finite() && m.spurious_strength >= 0.0)
            {
                return bad(format!(
                    "modality {:?}: scales must be finite, noise and spurious strength non-negative",
                    m.name
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Modality {
    pub name: String,
    pub features: Matrix,
}

/// Row-aligned per-modality features with identity, view and split labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    pub modalities: Vec<Modality>,
    pub ids: Vec<u64>,
    pub views: Vec<u32>,
    pub splits: Vec<Split>,
}

impl MultimodalDataset {
    pub fn num_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.features.cols()).collect()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.num_samples())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    pub fn ids_in(&self, split: Split) -> BTreeSet<u64> {
        self.indices(split)
            .into_iter()
            .map(|i| self.ids[i])
            .collect()
    }

    /// Rows `indices` of every modality plus their labels, in the given order.
    pub fn subset(&self, indices: &[usize]) -> MultimodalDataset {
        MultimodalDataset {
            modalities: self
                .modalities
                .iter()
                .map(|m| Modality {
                    name: m.name.clone(),
                    features: m.features.select_rows(indices),
                })
                .collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            views: indices.iter().map(|&i| self.views[i]).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
        }
    }

    /// Checks alignment and the split protocol: disjoint train/test identities
    /// and every query identity present in the gallery.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_samples();
        if self.views.len() != n || self.splits.len() != n {
            return Err(Error::Shape("label vectors are not aligned".into()));
        }
        for m in &self.modalities {
            if m.features.rows() != n {
                return Err(Error::Shape(format!(
                    "modality {:?} has {} rows, expected {n}",
                    m.name,
                    m.features.rows()
                )));
            }
        }
        let train = self.ids_in(Split::Train);
        let query = self.ids_in(Split::Query);
        let gallery = self.ids_in(Split::Gallery);
        if train.intersection(&query).next().is_some()
            || train.intersection(&gallery).next().is_some()
        {
            return Err(Error::Split("train and test identities overlap".into()));
        }
        if let Some(id) = query.difference(&gallery).next() {
            return Err(Error::Split(format!("query id {id} has no gallery sample")));
        }
        Ok(())
    }
}

/// Columns of a random `rows × cols` Gaussian matrix, orthonormalized by
/// modified Gram-Schmidt.
fn orthonormal_columns(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut cols_vec: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| rng.normal()).collect())
        .collect();
    for j in 0..cols {
        for k in 0..j {
            let dot: f64 = cols_vec[j]
                .iter()
                .zip(&cols_vec[k])
                .map(|(a, b)| a * b)
                .sum();
            let (head, tail) = cols_vec.split_at_mut(j);
            for (a, b) in tail[0].iter_mut().zip(&head[k]) {
                *a -= dot * b;
            }
        }
        let norm = cols_vec[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols_vec[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut a = Matrix::zeros(rows, cols);
    for (c, col) in cols_vec.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            a.set(r, c, *v);
        }
    }
    a
}

/// Draws a dataset. Sample order: identity-major, view-minor; training
/// identities `0..ids_train` first, then test identities.
pub fn generate(cfg: &SynthConfig) -> Result<MultimodalDataset> {
    cfg.validate()?;
    let num_ids = cfg.ids_train + cfg.ids_test;
    let n = num_ids * cfg.views_per_id;

    let mut latent_rng = Rng::split(cfg.seed, "synth/latent");
    let latents: Vec<Vec<f64>> = (0..num_ids)
        .map(|_| (0..cfg.latent_dim).map(|_| latent_rng.normal()).collect())
        .collect();

    let mut jitter_rng = Rng::split(cfg.seed, "synth/jitter");
    let mut codes = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut views = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for (y, u) in latents.iter().enumerate() {
        for v in 0..cfg.views_per_id {
            let code: Vec<f64> = u
                .iter()
                .map(|&ui| ui + cfg.view_jitter * jitter_rng.normal())
                .collect();
            codes.push(code);
            ids.push(y as u64);
            views.push(v as u32);
            splits.push(if y < cfg.ids_train {
                Split::Train
            } else {
                Split::Gallery
            });
        }
    }

    let mut modalities = Vec::with_capacity(cfg.num_modalities());
    for (i, spec) in cfg.modalities.iter().enumerate() {
        let proj = orthonormal_columns(
            &mut Rng::split(cfg.seed, &format!("synth/projection/{i}")),
            spec.obs_dim,
            cfg.latent_dim,
        );
        let mut noise_rng = Rng::split(cfg.seed, &format!("synth/noise/{i}"));
        let mut spur_rng = Rng::split(cfg.seed, &format!("synth/spurious/{i}"));
        let train_codes: Vec<Vec<f64>> = (0..cfg.ids_train)
            .map(|_| (0..spec.spurious_dim).map(|_| spur_rng.normal()).collect())
            .collect();

        let width = spec.obs_dim + spec.spurious_dim;
        let mut x = Matrix::zeros(n, width);
        for s in 0..n {
            let row = x.row_mut(s);
            let code = &codes[s];
            for r in 0..spec.obs_dim {
                let mut acc = 0.0;
                for (c, &cv) in code.iter().enumerate() {
                    acc += proj.get(r, c) * cv;
                }
                row[r] = spec.signal_scale * acc + spec.noise_sigma * noise_rng.normal();
            }
            let y = ids[s] as usize;
            for d in 0..spec.spurious_dim {
                let sv = if y < cfg.ids_train {
                    train_codes[y][d]
                } else {
                    spur_rng.normal()
                };
                row[spec.obs_dim + d] = spec.spurious_strength * sv;
            }
        }
        modalities.push(Modality {
            name: spec.name.clone(),
            features: x,
        });
    }

    let ds = MultimodalDataset {
        modalities,
        ids,
        views,
        splits,
    };
    let mut split_rng = Rng::split(cfg.seed, "synth/query-split");
    split_query_gallery(&ds, cfg.query_views, &mut split_rng)
}

/// Re-tags every non-train sample: per identity, `views_as_query` randomly
/// chosen samples become queries and the rest gallery.
pub fn split_query_gallery(
    ds: &MultimodalDataset,
    views_as_query: usize,
    rng: &mut Rng,
) -> Result<MultimodalDataset> {
    let mut by_id: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.num_samples() {
        if ds.splits[i] != Split::Train {
            by_id.entry(ds.ids[i]).or_default().push(i);
        }
    }
    let mut out = ds.clone();
    for (id, mut members) in by_id {
        if members.len() <= views_as_query {
            return Err(Error::Split(format!(
                "test id {id} has {} samples, need more than {views_as_query}",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for (k, &i) in members.iter().enumerate() {
            out.splits[i] = if k < views_as_query {
                Split::Query
            } else {
                Split::Gallery
            };
        }
    }
    Ok(out)
}

/// Presents modality `modality_index` as `copies` identical streams.
pub fn replicate_modality(
    ds: &MultimodalDataset,
    modality_index: usize,
    copies: usize,
) -> Result<MultimodalDataset> {
    let src = ds.modalities.get(modality_index).ok_or_else(|| {
        Error::Index(format!(
            "modality {modality_index} requested, dataset has {}",
            ds.num_modalities()
        ))
    })?;
    if copies < 2 {
        return Err(Error::Config(format!(
            "copies must be at least 2, got {copies}"
        )));
    }
    Ok(MultimodalDataset {
        modalities: (0..copies)
            .map(|c| Modality {
                name: format!("{}#{c}", src.name),
                features: src.features.clone(),
            })
            .collect(),
        ids: ds.ids.clone(),
        views: ds.views.clone(),
        splits: ds.splits.clone(),
    })
}

/// Moves a `fraction` of the training identities (at least two) into a
/// validation set split into query/gallery. Returns `(remaining train, validation)`.
pub fn holdout_validation(
    ds: &MultimodalDataset,
    fraction: f64,
    rng: &mut Rng,
) -> Result<(MultimodalDataset, MultimodalDataset)> {
    let mut train_ids: Vec<u64> = ds.ids_in(Split::Train).into_iter().collect();
    let held = ((train_ids.len() as f64 * fraction).round() as usize).max(2);
    if held + 2 > train_ids.len() {
        return Err(Error::Split(format!(
            "cannot hold out {held} of {} training identities",
            train_ids.len()
        )));
    }
    rng.shuffle(&mut train_ids);
    let held_ids: BTreeSet<u64> = train_ids[..held].iter().copied().collect();
    let train_idx: Vec<usize> = ds
        .indices(Split::Train)
        .into_iter()
        .filter(|i| !held_ids.contains(&ds.ids[*i]))
        .collect();
    let val_idx: Vec<usize> = ds
        .indices(Split::Train)
        .into_iter()
        .filter(|i| held_ids.contains(&ds.ids[*i]))
        .collect();
    let mut val = ds.subset(&val_idx);
    val.splits.iter_mut().for_each(|s| *s = Split::Gallery);
    let val = split_query_gallery(&val, 1, rng)?;
    Ok((ds.subset(&train_idx), val))
}

/// Training samples only, re-tagged as query/gallery with the test protocol.
pub fn trainset_as_retrieval(
    ds: &MultimodalDataset,
    views_as_query: usize,
    rng: &mut Rng,
) -> Result<MultimodalDataset> {
    let mut train = ds.subset(&ds.indices(Split::Train));
    train.splits.iter_mut().for_each(|s| *s = Split::Gallery);
    split_query_gallery(&train, views_as_query, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pairwise_euclidean;

    fn tiny(seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::clean(seed);
        cfg.ids_train = 10;
        cfg.ids_test = 6;
        cfg.views_per_id = 4;
        cfg
    }

    #[test]
    fn noiseless_identities_are_constant() {
        let mut cfg = tiny(1);
        cfg.view_jitter = 0.0;
        cfg.modalities.iter_mut().for_each(|m| m.noise_sigma = 0.0);
        let ds = generate(&cfg).unwrap();
        for m in &ds.modalities {
            for i in 0..ds.num_samples() {
                for j in 0..ds.num_samples() {
                    if ds.ids[i] == ds.ids[j] {
                        assert_eq!(m.features.row(i), m.features.row(j));
                    }
                }
            }
        }
    }

    #[test]
    fn shape_arithmetic() {
        let mut cfg = SynthConfig::clean(2);
        cfg.ids_train = 100;
        cfg.views_per_id = 8;
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.num_modalities(), 3);
        assert_eq!(ds.indices(Split::Train).len(), 800);
        for m in &ds.modalities {
            assert_eq!(m.features.rows(), (100 + cfg.ids_test) * 8);
        }
    }

    #[test]
    fn spurious_columns_appended() {
        let ds = generate(&SynthConfig::weak_link(3)).unwrap();
        assert_eq!(ds.modalities[1].features.cols(), 32 + 8);
        assert_eq!(ds.modalities[0].features.cols(), 32);
    }

    #[test]
    fn spurious_codes_constant_on_train_random_on_test() {
        let ds = generate(&SynthConfig::weak_link(4)).unwrap();
        let x = &ds.modalities[1].features;
        let tail = |i: usize| x.row(i)[32..].to_vec();
        // samples 0 and 1 share train identity 0
        assert_eq!(tail(0), tail(1));
        let test = ds.indices(Split::Gallery);
        let (a, b) = (test[0], test[1]);
        assert_eq!(ds.ids[a], ds.ids[b]);
        assert_ne!(tail(a), tail(b));
    }

    fn one_nn_accuracy(x: &Matrix, ids: &[u64]) -> f64 {
        let d = pairwise_euclidean(x, x).unwrap();
        let mut hits = 0;
        for i in 0..x.rows() {
            let mut best = (f64::INFINITY, 0);
            for j in 0..x.rows() {
                if i != j && d.get(i, j) < best.0 {
                    best = (d.get(i, j), j);
                }
            }
            hits += usize::from(ids[best.1] == ids[i]);
        }
        hits as f64 / x.rows() as f64
    }

    #[test]
    fn huge_noise_drives_one_nn_toward_chance() {
        let mut cfg = tiny(5);
        cfg.ids_test = 20;
        cfg.modalities[2].noise_sigma = 50.0;
        let ds = generate(&cfg).unwrap();
        let test: Vec<usize> = (0..ds.num_samples())
            .filter(|&i| ds.splits[i] != Split::Train)
            .collect();
        let sub = ds.subset(&test);
        let clean = one_nn_accuracy(&sub.modalities[0].features, &sub.ids);
        let noisy = one_nn_accuracy(&sub.modalities[2].features, &sub.ids);
        assert!(clean > 0.6, "clean {clean}");
        assert!(noisy < 0.25, "noisy {noisy}");
    }

    #[test]
    fn split_protocol_holds() {
        let ds = generate(&tiny(6)).unwrap();
        ds.validate().unwrap();
        let mut per_id: BTreeMap<u64, usize> = BTreeMap::new();
        for i in ds.indices(Split::Gallery) {
            *per_id.entry(ds.ids[i]).or_default() += 1;
        }
        assert!(per_id.values().all(|&c| c == 3));
        assert_eq!(ds.ids_in(Split::Query), ds.ids_in(Split::Gallery));
    }

    #[test]
    fn split_is_seeded() {
        let ds = generate(&tiny(7)).unwrap();
        let a = split_query_gallery(&ds, 1, &mut Rng::new(1)).unwrap();
        let b = split_query_gallery(&ds, 1, &mut Rng::new(1)).unwrap();
        assert_eq!(a.splits, b.splits);
    }

    #[test]
    fn split_needs_enough_views() {
        let ds = generate(&tiny(8)).unwrap();
        assert!(matches!(
            split_query_gallery(&ds, 4, &mut Rng::new(0)),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn replicate_duplicates_bytewise() {
        let ds = generate(&tiny(9)).unwrap();
        let r = replicate_modality(&ds, 2, 2).unwrap();
        assert_eq!(r.num_modalities(), 2);
        assert_eq!(r.modalities[0].features, r.modalities[1].features);
        assert_eq!(r.modalities[0].features, ds.modalities[2].features);
        assert_eq!(r.ids, ds.ids);
        assert_eq!(r.views, ds.views);
        assert!(matches!(
            replicate_modality(&ds, 3, 2),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = tiny(0);
        cfg.views_per_id = 1;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let mut cfg = tiny(0);
        cfg.ids_test = 1;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let mut cfg = tiny(0);
        cfg.modalities.clear();
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn holdout_is_disjoint() {
        let ds = generate(&SynthConfig::clean(10)).unwrap();
        let (train, val) = holdout_validation(&ds, 0.1, &mut Rng::new(3)).unwrap();
        assert_eq!(val.ids_in(Split::Query).len(), 6);
        assert!(train
            .ids_in(Split::Train)
            .is_disjoint(&val.ids_in(Split::Gallery)));
        assert_eq!(
            train.num_samples() + val.num_samples(),
            ds.indices(Split::Train).len()
        );
        val.validate().unwrap();
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn generation_is_pure_and_disjoint(seed in 0u64..1_000) {
            let a = generate(&tiny(seed)).unwrap();
            let b = generate(&tiny(seed)).unwrap();
            proptest::prop_assert_eq!(&a, &b);
            proptest::prop_assert!(a.validate().is_ok());
        }

        #[test]
        fn within_id_closer_than_between(seed in 0u64..1_000) {
            let mut cfg = tiny(seed);
            cfg.view_jitter = 0.1;
            cfg.modalities.iter_mut().for_each(|m| m.noise_sigma = 0.0);
            let ds = generate(&cfg).unwrap();
            let x = &ds.modalities[0].features;
            let d = pairwise_euclidean(x, x).unwrap();
            let (mut within, mut between) = (Vec::new(), Vec::new());
            for i in 0..x.rows() {
                for j in (i + 1)..x.rows() {
                    if ds.ids[i] == ds.ids[j] { within.push(d.get(i, j)) } else { between.push(d.get(i, j)) }
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            // jitter distance ~ κ·sqrt(2·latent_dim) in expectation
            let bound = 0.1 * (2.0 * cfg.latent_dim as f64).sqrt() * 2.0;
            proptest::prop_assert!(within.iter().all(|&w| w < bound));
            proptest::prop_assert!(mean(&within) < mean(&between));
        }
    }
}
