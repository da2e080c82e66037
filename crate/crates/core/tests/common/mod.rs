#![allow(dead_code)]

use unicat::model::{stream_init_tag, Architecture, ModelParams};
use unicat::numerics::{Matrix, Rng};
use unicat::objectives::{LossConfig, Strategy};
use unicat::pipeline::batch_objective;
use unicat::synthdata::{MultimodalDataset, SynthConfig};

/// A small but complete dataset for fast end-to-end runs.
pub fn tiny_synth(seed: u64) -> SynthConfig {
    let mut c = SynthConfig::clean(seed);
    c.ids_train = 12;
    c.ids_test = 6;
    c.views_per_id = 4;
    c
}

/// Keeps only modality `i` (stream `i` trained on its own).
pub fn single_modality(ds: &MultimodalDataset, i: usize) -> MultimodalDataset {
    MultimodalDataset {
        modalities: vec![ds.modalities[i].clone()],
        ids: ds.ids.clone(),
        views: ds.views.clone(),
        splits: ds.splits.clone(),
    }
}

pub fn init_model(
    strategy: Strategy,
    dims: &[usize],
    arch: &Architecture,
    num_ids: usize,
    seed: u64,
) -> ModelParams {
    let tags: Vec<usize> = (0..dims.len()).collect();
    ModelParams::init(strategy, dims, &tags, arch, num_ids, seed).unwrap()
}

pub fn init_tag(i: usize) -> String {
    stream_init_tag(i)
}

/// `p` identities with `k` samples each, labels `0..p`.
pub fn pk_labels(p: usize, k: usize) -> Vec<usize> {
    (0..p).flat_map(|c| std::iter::repeat_n(c, k)).collect()
}

pub fn random_inputs(dims: &[usize], rows: usize, rng: &mut Rng) -> Vec<Matrix> {
    dims.iter().map(|&d| rng.normal_matrix(rows, d)).collect()
}

pub fn flatten(model: &mut ModelParams) -> Vec<f64> {
    model
        .param_slices_mut()
        .iter()
        .flat_map(|s| s.iter().copied())
        .collect()
}

pub fn unflatten(model: &mut ModelParams, flat: &[f64]) {
    let mut o = 0;
    for s in model.param_slices_mut() {
        s.copy_from_slice(&flat[o..o + s.len()]);
        o += s.len();
    }
    assert_eq!(o, flat.len());
}

/// Full training objective as a function of the flattened parameters.
pub fn objective_at(
    model: &ModelParams,
    flat: &[f64],
    xs: &[Matrix],
    labels: &[usize],
    cfg: &LossConfig,
) -> f64 {
    let mut m = model.clone();
    unflatten(&mut m, flat);
    batch_objective(&mut m, xs, labels, cfg).unwrap().loss
}

/// Analytic gradient of the full objective, flattened in parameter order.
pub fn analytic_gradient(
    model: &ModelParams,
    xs: &[Matrix],
    labels: &[usize],
    cfg: &LossConfig,
) -> (f64, Vec<f64>) {
    let mut m = model.clone();
    let obj = batch_objective(&mut m, xs, labels, cfg).unwrap();
    let flat = obj
        .grads
        .slices()
        .iter()
        .flat_map(|s| s.iter().copied())
        .collect();
    (obj.loss, flat)
}
