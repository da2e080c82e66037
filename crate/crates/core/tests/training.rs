mod common;

use unicat::objectives::Strategy;
use unicat::pipeline::{train, train_with_stream_tags, TrainConfig};
use unicat::synthdata::{generate, SynthConfig};

use common::{single_modality, tiny_synth};

#[test]
fn clean_preset_trains_to_high_accuracy() {
    let ds = generate(&SynthConfig::clean(0)).unwrap();
    for s in Strategy::ALL {
        let r = train(&ds, &TrainConfig::new(s, 0)).unwrap();
        let first = r.epoch_loss[0];
        let last = *r.epoch_loss.last().unwrap();
        assert!(last < first, "{s}: loss {first} -> {last}");
        let acc = *r.epoch_accuracy.last().unwrap();
        assert!(acc > 0.95, "{s}: final accuracy {acc}");
        assert_eq!(r.epoch_loss.len(), 200);
    }
}

#[test]
fn unicat_streams_match_solo_runs() {
    let ds = generate(&tiny_synth(3)).unwrap();
    let mut cfg = TrainConfig::new(Strategy::UniCat, 17);
    cfg.p = 4;
    cfg.epochs = 8;
    cfg.warmup_epochs = 2;
    let joint = train(&ds, &cfg).unwrap();
    for i in 0..ds.num_modalities() {
        let solo = train_with_stream_tags(&single_modality(&ds, i), &cfg, &[i]).unwrap();
        assert_eq!(solo.model.streams[0], joint.model.streams[i], "stream {i}");
    }
}

#[test]
fn fusion_streams_are_entangled() {
    let ds = generate(&tiny_synth(3)).unwrap();
    let mut cfg = TrainConfig::new(Strategy::FusionConcat, 17);
    cfg.p = 4;
    cfg.epochs = 4;
    cfg.warmup_epochs = 1;
    let joint = train(&ds, &cfg).unwrap();
    let solo = train_with_stream_tags(&single_modality(&ds, 0), &cfg, &[0]).unwrap();
    assert_ne!(solo.model.streams[0].layers, joint.model.streams[0].layers);
}

#[test]
fn dataset_config_mismatch_is_rejected() {
    let ds = generate(&tiny_synth(1)).unwrap();
    let mut cfg = TrainConfig::new(Strategy::UniCat, 0);
    cfg.p = 40;
    assert!(train(&ds, &cfg).is_err());
}
