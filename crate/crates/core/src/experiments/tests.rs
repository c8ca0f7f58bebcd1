use super::*;
use crate::autoencoder::AutoencoderConfig;
use crate::classifiers::{CnnConfig, KnnModel, RnnConfig, Standardizer};
use crate::synth::gen_dataset;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn rows_for(subjects: usize, reps: usize, n: usize, seed: u64) -> Vec<ResampledSequence> {
    preprocess_dataset(&gen_dataset(subjects, reps, seed), n, PreprocessConfig::default()).unwrap()
}

fn key(r: &ResampledSequence) -> (String, String) {
    (r.subject_id.clone(), r.sequence_id.clone())
}

fn tiny_models() -> ModelConfig {
    let mut m = ModelConfig::default();
    m.svm.iterations = 300;
    m.cnn = CnnConfig {
        conv_channels: [2, 2, 2],
        fc: vec![4],
        epochs: 1,
        batch_size: 32,
        ..Default::default()
    };
    m.rnn = RnnConfig {
        hidden: 3,
        epochs: 1,
        batch_size: 32,
        ..Default::default()
    };
    m
}

fn tiny_ae() -> AutoencoderConfig {
    AutoencoderConfig {
        epochs: 1,
        ..Default::default()
    }
}

#[test]
fn random_split_exact_on_divisible_input() {
    let rows: Vec<usize> = (0..100).collect();
    let (tr, dv, te) = random_split(&rows, [80, 10, 10], 3).unwrap();
    assert_eq!((tr.len(), dv.len(), te.len()), (80, 10, 10));
    assert_eq!(random_split(&rows, [80, 10, 10], 3).unwrap(), (tr, dv, te));
    assert!(random_split(&rows[..9], [80, 10, 10], 3).is_err());
}

proptest! {
    #[test]
    fn random_split_is_a_partition(n in 10usize..300, dev in 1u32..40, test in 1u32..40, seed in any::<u64>()) {
        let ratios = [100 - dev - test, dev, test];
        let rows: Vec<usize> = (0..n).collect();
        let (tr, dv, te) = random_split(&rows, ratios, seed).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&dv).chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, rows);
        for (part, r) in [(&tr, ratios[0]), (&dv, ratios[1]), (&te, ratios[2])] {
            let exact = n as f64 * f64::from(r) / 100.0;
            prop_assert!((part.len() as f64 - exact).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn accuracy_matches_a_recount(pairs in prop::collection::vec((0usize..26, 0usize..26), 1..200)) {
        let truth: Vec<Label> = pairs.iter().map(|p| Label::from_index(p.0).unwrap()).collect();
        let pred: Vec<Label> = pairs.iter().map(|p| Label::from_index(p.1).unwrap()).collect();
        let e = Evaluation::from_predictions(&truth, &pred).unwrap();
        let hits = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert_eq!(e.accuracy, hits as f64 / pairs.len() as f64);
        for l in 0..26 {
            let row: u64 = e.confusion[l].iter().sum();
            prop_assert_eq!(row as usize, pairs.iter().filter(|p| p.0 == l).count());
        }
        let trace: u64 = (0..26).map(|i| e.confusion[i][i]).sum();
        prop_assert_eq!(trace as f64 / pairs.len() as f64, e.accuracy);
    }
}

#[test]
fn subject_split_minimal_case() {
    let rows = rows_for(5, 1, 10, 1);
    let (tr, dv, te) = subject_split(&rows, 2, 2, 9).unwrap();
    let subj = |p: &[ResampledSequence]| p.iter().map(|r| r.subject_id.clone()).collect::<BTreeSet<_>>();
    assert_eq!((subj(&tr).len(), subj(&dv).len(), subj(&te).len()), (1, 2, 2));
    assert!(subj(&tr).is_disjoint(&subj(&dv)));
    assert!(subj(&tr).is_disjoint(&subj(&te)));
    assert!(subj(&dv).is_disjoint(&subj(&te)));
    assert_eq!(tr.len() + dv.len() + te.len(), rows.len());
    assert_eq!(subject_split(&rows, 2, 2, 9).unwrap(), (tr, dv, te));
    assert!(subject_split(&rows, 2, 3, 9).is_err());
}

#[test]
fn subject_assignment_varies_with_seed() {
    let rows = rows_for(6, 1, 10, 1);
    let tests: BTreeSet<Vec<String>> = (0..10)
        .map(|s| {
            let (_, _, te) = subject_split(&rows, 1, 1, s).unwrap();
            te.iter().map(|r| r.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
        })
        .collect();
    assert!(tests.len() > 1);
}

#[test]
fn evaluation_spot_values() {
    let truth: Vec<Label> = Label::all().collect();
    let perfect = Evaluation::from_predictions(&truth, &truth).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    for i in 0..26 {
        for j in 0..26 {
            assert_eq!(perfect.confusion[i][j], u64::from(i == j));
        }
    }
    let a = vec![Label::from_char('a').unwrap(); 26];
    let constant = Evaluation::from_predictions(&truth, &a).unwrap();
    assert!((constant.accuracy - 1.0 / 26.0).abs() < 1e-15);
    assert!(Evaluation::from_predictions(&[], &[]).is_err());
}

#[test]
fn evaluate_rejects_empty_rows() {
    let rows = rows_for(1, 1, 10, 2);
    let m = crate::classifiers::train(ModelKind::Knn, &ModelConfig::default(), &rows, &[], 0).unwrap().0;
    assert!(evaluate(&m, &[]).is_err());
    assert_eq!(evaluate(&m, &rows).unwrap().accuracy, 1.0);
}

#[test]
fn knn_experiment_beats_chance_and_is_reproducible() {
    let data = gen_dataset(3, 4, 5);
    let mut cfg = ExperimentConfig {
        n_features: 30,
        record_runtime: false,
        augment: Some(AugmentConfig::default()),
        ..Default::default()
    };
    cfg.models.knn.k = 4;
    let a = run_experiment(&cfg, &data).unwrap().report;
    assert!(a.accuracies.test > 1.0 / 26.0, "{}", a.accuracies.test);
    assert!(a.audit.passed);
    assert_eq!(a.counts.train_fitted, a.counts.train * 5);
    assert_eq!(a.runtime_s, None);
    let b = run_experiment(&cfg, &data).unwrap().report;
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    cfg.record_runtime = true;
    assert!(run_experiment(&cfg, &data).unwrap().report.runtime_s.is_some());
}

#[test]
fn augmentation_never_reaches_dev_or_test() {
    let rows = rows_for(5, 2, 20, 3);
    for kind in SplitKind::ALL {
        let mut cfg = ExperimentConfig {
            n_features: 20,
            augment: Some(AugmentConfig::default()),
            autoencoder: Some(tiny_ae()),
            ..Default::default()
        };
        cfg.split.kind = kind;
        let p = prepare(&cfg, &rows).unwrap();
        assert!(p.dev.iter().chain(&p.test).all(|r| !r.is_augmented()));
        assert!(p.train.iter().any(|r| r.is_augmented()));
        let o = train_and_report(&cfg, &p, Instant::now()).unwrap();
        assert!(o.report.audit.checks.iter().all(|c| c.passed));
        if kind == SplitKind::Subject {
            assert!(o.report.audit.checks.iter().any(|c| c.name == "subjects_disjoint"));
        }
    }
}

/// Fitting anything on dev or test rows must trip the audit.
#[test]
fn audit_catches_leaks() {
    let rows = rows_for(5, 2, 20, 4);
    let cfg = ExperimentConfig {
        n_features: 20,
        autoencoder: Some(tiny_ae()),
        augment: Some(AugmentConfig::default()),
        ..Default::default()
    };
    let p = prepare(&cfg, &rows).unwrap();
    let model = crate::classifiers::train(ModelKind::Knn, &cfg.models, &p.train, &p.dev, 0).unwrap().0;
    let clean = audit(&p, &model);
    assert!(clean.passed, "{:?}", clean.failures());

    let failed = |a: &LeakageAudit| a.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect::<Vec<_>>();

    // autoencoders fitted with dev rows included
    let mut leaky = p.clone();
    let mut fit_rows = p.train_augmented.clone();
    fit_rows.extend(p.dev.iter().cloned());
    leaky.autoencoders = Some(ChannelAutoencoders::fit(&fit_rows, &tiny_ae(), 0).unwrap());
    assert_eq!(failed(&audit(&leaky, &model)), ["autoencoder_fit_on_train"]);

    // standardization computed over train and test
    let mut all = p.train.clone();
    all.extend(p.test.iter().cloned());
    let mut leaky_model = KnnModel::fit(&p.train, &Default::default()).unwrap();
    leaky_model.standardizer = Standardizer::fit_per_dimension(&all);
    let names = failed(&audit(&p, &TrainedModel::Knn(leaky_model)));
    assert!(names.contains(&"standardizer_fit_on_train".to_string()), "{names:?}");

    // a test row copied into train
    let mut leaky = p.clone();
    leaky.train_original.push(p.test[0].clone());
    assert!(failed(&audit(&leaky, &model)).contains(&"partitions_disjoint".to_string()));

    // an augmented copy of a dev row
    let mut leaky = p.clone();
    let mut copy = p.dev[0].clone();
    copy.sequence_id.push_str("#aug0");
    leaky.train_augmented.push(copy.clone());
    assert!(failed(&audit(&leaky, &model)).contains(&"augmentation_from_train".to_string()));
    let mut leaky = p.clone();
    leaky.test.push(copy);
    assert!(failed(&audit(&leaky, &model)).contains(&"no_augmented_eval_rows".to_string()));
}

#[test]
fn knn_only_ablation_has_two_cells() {
    let rows = rows_for(5, 2, 20, 5);
    let mut cfg = ExperimentConfig {
        n_features: 20,
        ..Default::default()
    };
    cfg.ablation.models = vec![ModelKind::Knn];
    let t = run_ablation_rows(&cfg, &rows).unwrap();
    assert_eq!(t.cells.len(), 2);
    assert_eq!(t.rows().len(), 2);
}

#[test]
fn full_grid_enumeration_and_cell_equivalence() {
    let rows = rows_for(5, 2, 16, 6);
    let cfg = ExperimentConfig {
        n_features: 16,
        seed: 11,
        models: tiny_models(),
        autoencoder: Some(tiny_ae()),
        augment: Some(AugmentConfig {
            copies_per_sequence: 1,
            ..Default::default()
        }),
        ..Default::default()
    };
    let t = run_ablation_rows(&cfg, &rows).unwrap();
    let deep = t.cells.iter().filter(|c| c.model.is_deep()).count();
    assert_eq!((deep, t.cells.len() - deep), (16, 4));
    assert!(t.cells.iter().all(|c| c.outcome.is_ok()));
    assert_eq!(t.overall_rows().len(), 8);

    let cell = t
        .cells
        .iter()
        .find(|c| c.model == ModelKind::Cnn && c.split == SplitKind::Subject && c.aug && !c.ae)
        .unwrap();
    let mut single = cfg.clone();
    single.model = ModelKind::Cnn;
    single.split.kind = SplitKind::Subject;
    single.autoencoder = None;
    single.record_runtime = false;
    let direct = run_experiment_rows(&single, &rows).unwrap().report;
    assert_eq!(cell.outcome.as_ref().unwrap(), &direct);
}

#[test]
fn ablation_records_cell_failures() {
    let rows = rows_for(4, 2, 16, 7);
    let mut cfg = ExperimentConfig {
        n_features: 16,
        ..Default::default()
    };
    cfg.ablation.models = vec![ModelKind::Knn];
    let t = run_ablation_rows(&cfg, &rows).unwrap();
    let by_split: BTreeMap<SplitKind, bool> = t.cells.iter().map(|c| (c.split, c.outcome.is_ok())).collect();
    assert_eq!(by_split[&SplitKind::Random], true);
    assert_eq!(by_split[&SplitKind::Subject], false);
    assert!(t.any_succeeded());
    let dir = tempfile::tempdir().unwrap();
    emit_table(&t, dir.path()).unwrap();
    let cells = fs_read(&dir.path().join("cells.csv"));
    assert!(cells.contains("subject split needs at least 5 subjects"));
    let table = fs_read(&dir.path().join("ablation.csv"));
    assert_eq!(table.lines().nth(2).unwrap(), "knn,subject,off,off,,");
}

fn fs_read(p: &std::path::Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn report_files_and_round_trip() {
    let rows = rows_for(3, 2, 16, 8);
    let mut cfg = ExperimentConfig {
        n_features: 16,
        models: tiny_models(),
        ..Default::default()
    };
    let knn = run_experiment_rows(&cfg, &rows).unwrap().report;
    let dir = tempfile::tempdir().unwrap();
    emit_report(&knn, dir.path()).unwrap();
    for f in ["report.json", "confusion.csv", "curves.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("curves.svg").exists());

    let text = fs_read(&dir.path().join("report.json"));
    let back: ExperimentReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, knn);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let cfg_back: ExperimentConfig = serde_json::from_value(v["config"].clone()).unwrap();
    assert_eq!(cfg_back, cfg);

    let mut counts = [0u64; 26];
    let (_, _, test) = split(&rows, &cfg.split, seed::derive(cfg.seed, "split")).unwrap();
    for r in &test {
        counts[r.label.index()] += 1;
    }
    let csv = fs_read(&dir.path().join("confusion.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 27);
    for (i, line) in lines.enumerate() {
        let sum: u64 = line.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(sum, counts[i]);
    }

    cfg.model = ModelKind::Cnn;
    cfg.models.cnn.epochs = 3;
    let cnn = run_experiment_rows(&cfg, &rows).unwrap().report;
    let dir = tempfile::tempdir().unwrap();
    emit_report(&cnn, dir.path()).unwrap();
    let svg = fs_read(&dir.path().join("curves.svg"));
    assert!(svg.starts_with("<svg") && svg.matches("<polyline").count() == 2);
    assert_eq!(fs_read(&dir.path().join("curves.csv")).lines().count(), 4);
    assert!(cnn.notes.iter().any(|n| n.contains("cnn.epochs = 3 (default 20)")));
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"modle":"knn"}"#).is_err());
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"split":{"kind":"both"}}"#).is_err());
    let c: ExperimentConfig = serde_json::from_str(r#"{"model":"rnn","split":{"kind":"subject"}}"#).unwrap();
    assert_eq!((c.model, c.split.kind, c.n_features), (ModelKind::Rnn, SplitKind::Subject, 100));
    let mut bad = ExperimentConfig::default();
    bad.split.ratios = [80, 20, 0];
    assert!(bad.validate().is_err());
    bad = ExperimentConfig {
        n_features: 1,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn dev_and_test_rows_are_denoised_with_train_models() {
    let rows = rows_for(3, 2, 16, 9);
    let cfg = ExperimentConfig {
        n_features: 16,
        autoencoder: Some(tiny_ae()),
        ..Default::default()
    };
    let p = prepare(&cfg, &rows).unwrap();
    let aes = p.autoencoders.as_ref().unwrap();
    let raw: BTreeMap<_, _> = rows.iter().map(|r| (key(r), r)).collect();
    for r in &p.test {
        let rec = aes.models[1].reconstruct(&raw[&key(r)].channel(1)).unwrap();
        assert_eq!(r.channel(1), rec);
    }
}
