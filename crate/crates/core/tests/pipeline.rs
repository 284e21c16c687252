//! Staged training, checkpoints, inference and corpus round trips.

use std::collections::BTreeMap;

use sepkit::datagen::{build_corpus, Manifest, Split, MANIFEST_FILE};
use sepkit::dsp::{stft, NormStats};
use sepkit::masking::{apply_mask, MaskKind};
use sepkit::metrics::AssignMode;
use sepkit::neural::{AdamState, Checkpoint, Model, ModelKind, Stage};
use sepkit::pipeline::{
    dev_metrics, evaluate_system, separate, separate_dc_baseline, train_stage, Dataset, RunConfig, System, TrainOutcome,
};
use sepkit::Error;

fn tiny() -> RunConfig {
    let mut c = RunConfig::desk();
    c.corpus.n_train = 10;
    c.corpus.n_dev = 4;
    c.corpus.n_test = 4;
    c.arch.hidden = 6;
    c.arch.embed_dim = 2;
    c.train.batch_utts = 4;
    c.train.min_epochs = 3;
    c.train.max_epochs = 4;
    c
}

fn train(c: &RunConfig, stage: Stage, data: &Dataset, init: Option<&Checkpoint>) -> sepkit::Result<TrainOutcome> {
    train_stage(&c.train, &c.arch, stage, data, init)
}

#[test]
fn stages_run_in_order_and_record_lineage() {
    let c = tiny();
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    assert!(matches!(train(&c, Stage::Joint, &data, None), Err(Error::StageOrderViolation(_))));
    let dc = train(&c, Stage::Dc, &data, None).unwrap();
    assert_eq!(dc.log.len(), c.train.min_epochs + 1);
    assert!(matches!(train(&c, Stage::Dl, &data, Some(&dc.checkpoint)), Err(Error::StageOrderViolation(_))));
    assert!(matches!(train(&c, Stage::Dc, &data, Some(&dc.checkpoint)), Err(Error::StageOrderViolation(_))));

    let joint = train(&c, Stage::Joint, &data, Some(&dc.checkpoint)).unwrap();
    // Step-0 loss of the joint stage is the joint objective of the dc model.
    let (initial, _) = dev_metrics(&dc.checkpoint, &data, Stage::Joint, &c.train).unwrap();
    assert_eq!(joint.log[0].dev_loss, initial);

    let dl = train(&c, Stage::Dl, &data, Some(&joint.checkpoint)).unwrap();
    let lineage: Vec<Stage> = dl.checkpoint.lineage.iter().map(|l| l.stage).collect();
    assert_eq!(lineage, vec![Stage::Dc, Stage::Joint]);
    assert_eq!(dl.checkpoint.lineage[1].hash, joint.checkpoint.hash());
    assert_eq!(dl.checkpoint.lineage[0].hash, dc.checkpoint.hash());

    for out in [&dc, &joint, &dl] {
        for w in out.log.windows(2) {
            assert!(w[1].lr <= w[0].lr);
            assert!(w[1].step > w[0].step);
            // The rate changes only after a dev-loss increase, by the decay factor.
            if w[1].lr < w[0].lr {
                assert!((w[1].lr - w[0].lr * c.train.lr_decay).abs() < 1e-15);
            }
        }
        for w in out.log.windows(3) {
            if w[1].dev_loss > w[0].dev_loss {
                assert!((w[2].lr - w[1].lr * c.train.lr_decay).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn dev_increase_decays_the_rate() {
    const LR: f64 = 0.2;
    let mut c = tiny();
    // A large rate makes the dev loss bounce early.
    c.train.lr_init = LR;
    c.train.min_epochs = 6;
    c.train.max_epochs = 6;
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    let out = train(&c, Stage::Upit, &data, None).unwrap();
    let bumps = out.log.windows(2).filter(|w| w[1].dev_loss > w[0].dev_loss).count();
    assert!(bumps > 0, "expected at least one dev increase");
    let first = out.log.windows(2).position(|w| w[1].dev_loss > w[0].dev_loss).unwrap() + 1;
    if first + 1 < out.log.len() {
        assert!((out.log[first + 1].lr - LR * 0.7).abs() < 1e-15);
    }
}

#[test]
fn embedding_stage_reduces_dev_loss() {
    let mut c = tiny();
    c.corpus.n_train = 24;
    c.corpus.n_dev = 8;
    c.arch.hidden = 16;
    c.arch.embed_dim = 4;
    c.train.min_epochs = 6;
    c.train.max_epochs = 6;
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    let out = train(&c, Stage::Dc, &data, None).unwrap();
    let first = out.log.first().unwrap().dev_loss;
    let last = out.log.last().unwrap().dev_loss;
    assert!(last < first, "dev J_DC {first} -> {last}");
}

#[test]
fn training_is_deterministic() {
    let c = tiny();
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    let a = train(&c, Stage::Upit, &data, None).unwrap();
    let b = train(&c, Stage::Upit, &data, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint.hash(), b.checkpoint.hash());
    let mut other = c.clone();
    other.train.seed += 1;
    let d = train(&other, Stage::Upit, &data, None).unwrap();
    assert_ne!(a.checkpoint.hash(), d.checkpoint.hash());
}

#[test]
fn checkpoints_round_trip_and_reject_corruption() {
    let c = tiny();
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    let out = train(&c, Stage::Upit, &data, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::IncompatibleCheckpoint(_))));
}

#[test]
fn separation_shapes_and_stage_checks() {
    let c = tiny();
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    let dc = train(&c, Stage::Dc, &data, None).unwrap().checkpoint;
    let joint = train(&c, Stage::Joint, &data, Some(&dc)).unwrap().checkpoint;
    let utt = &data.test[0];
    let outs = separate(&joint, &utt.mixture, &c.stft).unwrap();
    assert_eq!(outs.len(), 2);
    assert!(outs.iter().all(|o| o.len() == utt.mixture.len()));
    assert_eq!(outs, separate(&joint, &utt.mixture, &c.stft).unwrap());
    assert!(matches!(separate(&dc, &utt.mixture, &c.stft), Err(Error::UnsupportedStage(_))));
    assert!(matches!(
        separate_dc_baseline(&joint, &utt.mixture, &c.stft, 0, 10),
        Err(Error::UnsupportedStage(_))
    ));

    // Binary K-means masks split the mixture spectrum exactly.
    let k = separate_dc_baseline(&dc, &utt.mixture, &c.stft, 0, 50).unwrap();
    assert_eq!(k.len(), 2);
    for i in 0..utt.mixture.len() {
        let s = k[0].samples[i] + k[1].samples[i];
        assert!((s - utt.mixture.samples[i]).abs() < 1e-9);
    }
}

#[test]
fn binary_masks_partition_the_mixture_spectrum() {
    let c = tiny();
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    let utt = &data.train[0];
    let spec = stft(&utt.mixture, &c.stft).unwrap();
    let member = sepkit::masking::dominant_membership(&utt.sources).unwrap();
    let (t, f) = spec.shape();
    let masks = sepkit::masking::MaskSet::new(
        (0..2)
            .map(|s| sepkit::Matrix::from_vec(t, f, member.labels().iter().map(|&l| f64::from(u8::from(l == s))).collect()))
            .collect(),
        MaskKind::Binary,
    )
    .unwrap();
    let parts = apply_mask(&spec, &masks).unwrap();
    for i in 0..spec.complex_bins().len() {
        assert_eq!(parts[0].complex_bins()[i] + parts[1].complex_bins()[i], spec.complex_bins()[i]);
    }
}

#[test]
fn zero_mask_model_scores_negative_infinity_everywhere() {
    let c = tiny();
    let data = Dataset::generate(&c.corpus, &c.stft).unwrap();
    let mut model = Model::new(ModelKind::Baseline, &c.arch, 0).unwrap();
    model.set_all(0.0);
    let ckpt = Checkpoint {
        stage: Stage::Upit,
        model,
        optimizer: AdamState::new(0.001).unwrap(),
        norm: NormStats::identity(c.arch.bins),
        lineage: Vec::new(),
        metadata: BTreeMap::new(),
    };
    let r = evaluate_system(System::Model(&ckpt), "zero", &data.test, &c.stft, &[AssignMode::Optimal]).unwrap();
    assert_eq!(r.rows[0].neg_inf, 2 * data.test.len());
    let again = evaluate_system(System::Model(&ckpt), "zero", &data.test, &c.stft, &[AssignMode::Optimal]).unwrap();
    assert_eq!(r, again);
}

#[test]
fn corpus_on_disk_matches_in_memory_generation() {
    let c = tiny();
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_corpus(&c.corpus, dir.path()).unwrap();
    assert_eq!(manifest.records.len(), 18);
    manifest.check_split_disjoint().unwrap();
    let test_speakers = manifest.speakers(Split::Test);
    assert!(manifest.speakers(Split::Train).is_disjoint(&test_speakers));

    let reloaded = Manifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(reloaded.records, manifest.records);
    let disk = Dataset::from_manifest(&reloaded, c.corpus.sample_rate, &c.stft).unwrap();
    let mem = Dataset::generate(&c.corpus, &c.stft).unwrap();
    for split in Split::ALL {
        for (a, b) in disk.split(split).iter().zip(mem.split(split)) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.mixture, b.mixture);
            assert_eq!(a.references, b.references);
            // Mixture is the sample-wise sum of the stored references.
            for i in 0..a.mixture.len() {
                let s: f64 = a.references.iter().map(|r| r.samples[i]).sum();
                assert!((s - a.mixture.samples[i]).abs() < 1e-12);
            }
        }
    }
    std::fs::remove_file(dir.path().join(&manifest.records[0].ref_paths[0])).unwrap();
    assert!(matches!(
        Dataset::from_manifest(&reloaded, c.corpus.sample_rate, &c.stft),
        Err(Error::ManifestError(_))
    ));
}
