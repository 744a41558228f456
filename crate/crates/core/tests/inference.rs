use emotion_tsn::data::{generate_fixture, Dataset, FixtureConfig};
use emotion_tsn::harness::{self, RunConfig, TsnModel};
use emotion_tsn::model::{consensus, NetworkKind, PredictionSet};
use emotion_tsn::sampler::{sample_segments, SampleMode};
use tempfile::TempDir;

fn setup(network: NetworkKind) -> (TempDir, Dataset, TsnModel) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FixtureConfig {
        n_instances: 3,
        frames_per_clip: 30,
        ..FixtureConfig::default()
    };
    let ds = generate_fixture(&cfg, dir.path()).unwrap();
    let run = RunConfig {
        network,
        seed: 3,
        ..RunConfig::default()
    };
    let model = TsnModel::new(&run, cfg.embedding_dim).unwrap();
    (dir, ds, model)
}

/// Each segment's snippet forwarded on its own, bypassing batching.
fn per_snippet(model: &TsnModel, ds: &Dataset, inst_idx: usize, k: usize) -> Vec<PredictionSet> {
    let inst = &ds.instances[inst_idx];
    let len = model.config().snippet_len(model.net().kind().primary_stream());
    let plan = sample_segments(inst.n_frames(), k, len, SampleMode::TestUniform, None);
    let (body, context) = model.snippets(ds, inst, &plan).unwrap();
    (0..k)
        .map(|i| {
            let ctx = context.as_ref().map(|c| &c[i]);
            model.net().forward_snippet(&body[i], ctx).unwrap()
        })
        .collect()
}

fn assert_close(a: &PredictionSet, b: &PredictionSet, tol: f64) {
    for (x, y) in a
        .categorical
        .iter()
        .chain(&a.continuous)
        .chain(&a.projected)
        .zip(b.categorical.iter().chain(&b.continuous).chain(&b.projected))
    {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn twenty_five_segment_consensus_is_the_mean_of_separate_forwards() {
    for network in [NetworkKind::RgbBc, NetworkKind::FlowB] {
        let (_dir, ds, model) = setup(network);
        let got = model.predict_instance(&ds, &ds.instances[0], 25).unwrap();
        let parts = per_snippet(&model, &ds, 0, 25);
        assert_eq!(parts.len(), 25);
        let n = parts.len() as f64;
        let mean = |f: fn(&PredictionSet) -> &Vec<f64>| -> Vec<f64> {
            (0..f(&parts[0]).len())
                .map(|j| parts.iter().map(|p| f(p)[j]).sum::<f64>() / n)
                .collect()
        };
        let oracle = PredictionSet {
            categorical: mean(|p| &p.categorical),
            continuous: mean(|p| &p.continuous),
            projected: mean(|p| &p.projected),
        };
        // Batched and single-snippet convolutions may round differently in f32.
        assert_close(&got, &oracle, 1e-5);
        assert_close(&got, &consensus(&parts).unwrap(), 1e-5);
    }
}

#[test]
fn single_segment_equals_the_centre_snippet() {
    let (_dir, ds, model) = setup(NetworkKind::RgbBc);
    let got = model.predict_instance(&ds, &ds.instances[1], 1).unwrap();
    let plan = sample_segments(ds.instances[1].n_frames(), 1, 1, SampleMode::TestUniform, None);
    assert_eq!(plan.segment_starts, vec![14]);
    let single = per_snippet(&model, &ds, 1, 1);
    assert_close(&got, &single[0], 1e-6);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let (dir, ds, model) = setup(NetworkKind::RgbBc);
    let before = model.predict(&ds, 5).unwrap();
    let path = model.save(&dir.path().join("ckpt"), "m", 0, Some(0.25)).unwrap();
    let (loaded, meta) = TsnModel::load(&path).unwrap();
    assert_eq!(meta.config, *model.config());
    assert_eq!(meta.config_hash, model.config().hash());
    assert_eq!(meta.streams, vec!["rgb_b", "rgb_c"]);
    assert_eq!(meta.val_ers, Some(0.25));
    assert_eq!(loaded.predict(&ds, 5).unwrap(), before);
    // The sidecar path works as well.
    let (again, _) = TsnModel::load(&path.with_extension("json")).unwrap();
    assert_eq!(again.predict(&ds, 5).unwrap(), before);
    assert_eq!(harness::predict(&path, &ds, 5).unwrap(), before);
}

#[test]
fn predictions_are_probabilities_and_repeatable() {
    let (_dir, ds, model) = setup(NetworkKind::FlowB);
    let a = model.predict(&ds, 25).unwrap();
    assert_eq!(a, model.predict(&ds, 25).unwrap());
    for r in &a {
        assert_eq!(r.categorical.len(), 26);
        assert_eq!(r.continuous.len(), 3);
        assert!(r.categorical.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
