use std::path::Path;

use vlpd::cross_modal::{load_pseudo_labels, pseudo_label_path};
use vlpd::evaluation::SubsetSpec;
use vlpd::pipeline::train::{read_loss_log, CHECKPOINT_FILE, LOSS_LOG_FILE};
use vlpd::pipeline::{
    evaluate_detector, make_synthetic_dataset, pseudolabel_dataset, Checkpoint, Dataset, Detector,
    TrainJob, Trainer, TrainingSet,
};
use vlpd::{Error, RunConfig};

const GOLDEN_COSINES: &str = "tests/golden/class_cosines.json";
const BLESS_ENV: &str = "VLPD_BLESS";

fn pairwise_cosines(det: &Detector) -> Vec<Vec<f64>> {
    let l = det.linguistic();
    (0..l.len())
        .map(|i| {
            (0..l.len())
                .map(|j| l.row(i).iter().zip(l.row(j)).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

#[test]
fn class_vectors_match_golden() {
    let det = Detector::new(&RunConfig::default()).unwrap();
    assert_eq!(det.linguistic().len(), 9);
    let got = pairwise_cosines(&det);
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN_COSINES);
    if std::env::var(BLESS_ENV).is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap()).unwrap();
    }
    let want: Vec<Vec<f64>> =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        assert!((g[i] - 1.0).abs() < 1e-12, "row {i} is not unit norm");
        for (a, b) in g.iter().zip(w) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn training_leaves_frozen_encoder_untouched() {
    let cfg = RunConfig {
        iterations: 5,
        learning_rate: 1e-3,
        ..RunConfig::default()
    };
    let items = vlpd::pipeline::synth::synth_images(3, 2, (64, 96)).unwrap();
    let mut trainer = Trainer::new(&cfg).unwrap();
    let set = TrainingSet::build(
        &trainer.detector,
        trainer.frozen(),
        items
            .iter()
            .map(|i| (i.id.clone(), i.image.clone(), i.boxes.clone()))
            .collect(),
        None,
    )
    .unwrap();
    let frozen_before = trainer.frozen().digest();
    let trainee_before = trainer.detector.encoder.digest();
    assert_eq!(frozen_before, trainee_before);
    for _ in 0..cfg.iterations {
        trainer.step(&set).unwrap();
    }
    assert_eq!(trainer.frozen().digest(), frozen_before);
    assert_ne!(trainer.detector.encoder.digest(), trainee_before);
}

#[test]
fn end_to_end_with_cached_pseudo_labels() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let labels = root.path().join("labels");
    let out = root.path().join("run");
    let ds = make_synthetic_dataset(11, 3, (64, 96), &data).unwrap();
    let cfg = RunConfig {
        iterations: 6,
        seed: 4,
        ..RunConfig::default()
    };
    assert_eq!(pseudolabel_dataset(&cfg, &ds, &labels).unwrap(), 3);
    let cached = load_pseudo_labels(pseudo_label_path(&labels, &ds.records[0].id)).unwrap();
    assert_eq!(cached.hw(), (4, 6));

    let config = root.path().join("job.toml");
    std::fs::write(
        &config,
        "dataset = \"data\"\noutput = \"run\"\npseudo_labels = \"labels\"\n[run]\niterations = 6\nseed = 4\n",
    )
    .unwrap();
    let job = TrainJob::load(&config).unwrap();
    let outcome = job.run().unwrap();
    // cached labels come from the same pretrained weights, so the first VLS term is zero
    assert_eq!(outcome.records[0].l_vls, 0.0);

    let log = read_loss_log(&out.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log, outcome.records);
    let ck = Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.manifest.iteration, 6);
    assert_eq!(
        ck.detector.encoder.digest(),
        outcome.trainer.detector.encoder.digest()
    );

    let reloaded = Dataset::load(&data).unwrap();
    let (report, dets) =
        evaluate_detector(&ck.detector, &reloaded, 0.01, &SubsetSpec::predefined()).unwrap();
    assert_eq!(dets.len(), 3);
    assert_eq!(report.images, 3);
    assert_eq!(report.subsets.len() + report.undefined.len(), 5);
}

#[test]
fn missing_dataset_is_dataset_error() {
    let root = tempfile::tempdir().unwrap();
    assert!(matches!(
        Dataset::load(root.path().join("nope")),
        Err(Error::Dataset(_))
    ));
}
