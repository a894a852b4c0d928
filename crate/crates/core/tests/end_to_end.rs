use std::fs;
use std::path::Path;

use bagclip::encoders::Checkpoint;
use bagclip::evaluator::{assemble_tasks, newt_map, ranked_ap, similarity_ranking_report};
use bagclip::runner::{
    attribute_name, build_synthetic_world, run_eval, run_training, ExperimentConfig, StepLog, Strategy, SyntheticParams,
    SyntheticWorld, CHECKPOINT_DIR, COMPARISON_FILE, RANKINGS_FILE, RESULTS_FILE, RUN_METADATA, TRAIN_LOG,
};

fn world(seed: u64) -> SyntheticWorld {
    build_synthetic_world(&SyntheticParams { seed, ..Default::default() }).unwrap()
}

fn written(dir: &Path, seed: u64) -> ExperimentConfig {
    world(seed).write(dir).unwrap();
    ExperimentConfig::load(&dir.join("config.toml")).unwrap()
}

fn read_log(path: &Path) -> Vec<StepLog> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn training_and_evaluation_write_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = written(tmp.path(), 3);
    cfg.ablation_kinds.clear();
    let (run, result) = run_training(&cfg).unwrap();
    for f in [RUN_METADATA, TRAIN_LOG, "config.toml"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert_eq!(read_log(&run.join(TRAIN_LOG)), result.log);

    // the snapshot reproduces the run from anywhere
    let snapshot = ExperimentConfig::load(&run.join("config.toml")).unwrap();
    let report = run_eval(&snapshot, &run.join(CHECKPOINT_DIR), None).unwrap();
    for f in [COMPARISON_FILE, RESULTS_FILE, RANKINGS_FILE] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let methods: Vec<&str> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["CLIP", "CLIP+A", "CLIP^FT", "CLIP^FT+A"]);
    assert!(report.row("CLIP^FT+A").unwrap().accuracy > report.row("CLIP+A").unwrap().accuracy);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join(RUN_METADATA)).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["corpus_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_gives_identical_logs_and_weights() {
    let w = world(5);
    let mut cfg = w.default_config("unused");
    cfg.epochs = Some(3);
    let a = w.experiment(cfg.clone()).unwrap().train().unwrap();
    let b = w.experiment(cfg.clone()).unwrap().train().unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint.live, b.checkpoint.live);
    cfg.seed += 1;
    let c = w.experiment(cfg).unwrap().train().unwrap();
    assert_ne!(a.checkpoint.live, c.checkpoint.live);
}

#[test]
fn zero_epochs_keeps_the_initial_weights() {
    let w = world(2);
    let mut cfg = w.default_config("unused");
    cfg.epochs = Some(0);
    let exp = w.experiment(cfg).unwrap();
    let result = exp.train().unwrap();
    assert!(result.log.is_empty());
    let init = exp.initial_pair().unwrap();
    assert_eq!(result.checkpoint.live, init);
    assert_eq!(result.checkpoint.weights(true), init);
}

#[test]
fn loss_falls_over_training_for_every_strategy() {
    let w = world(4);
    for strategy in [
        Strategy::Standard,
        Strategy::VisibilityMask,
        Strategy::ThresholdMask,
        Strategy::InstanceMaxPool,
        Strategy::Fixmatch,
        Strategy::Kd,
    ] {
        let mut cfg = w.default_config("unused");
        cfg.strategy = strategy;
        cfg.epochs = Some(6);
        let log = w.experiment(cfg).unwrap().train().unwrap().log;
        let epoch_mean = |e: usize| {
            let v: Vec<f64> = log.iter().filter(|l| l.epoch == e).map(|l| l.loss_ft).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (first, last) = (epoch_mean(0), epoch_mean(5));
        assert!(log.iter().all(|l| l.loss_ft.is_finite() && l.tau > 0.0));
        assert!(last < first, "{strategy:?}: {first} -> {last}");
    }
}

#[test]
fn fine_tuning_improves_attribute_retrieval() {
    let w = world(1);
    let exp = w.experiment(w.default_config("unused")).unwrap();
    let trained = exp.train().unwrap();
    let (rows, items) = w.newt_tasks(20);
    assert!(rows.len() >= 5);
    let tasks = assemble_tasks(&rows, &items).unwrap();
    let frozen = newt_map(&exp.model(exp.initial_pair().unwrap()).unwrap(), &tasks, None).unwrap();
    let tuned = newt_map(&exp.model(trained.checkpoint.weights(true)).unwrap(), &tasks, None).unwrap();
    assert!(tuned.mean_ap > frozen.mean_ap + 0.05, "{} vs {}", tuned.mean_ap, frozen.mean_ap);
}

#[test]
fn images_showing_the_queried_attribute_rank_first() {
    let w = world(6);
    let exp = w.experiment(w.default_config("unused")).unwrap();
    let model = exp.model(exp.train().unwrap().checkpoint.weights(true)).unwrap();
    let images: Vec<_> = w.split.test.iter().flat_map(|c| w.images[c].clone()).collect();
    let mut aps = Vec::new();
    for class in w.classes.iter().filter(|c| w.split.test.contains(&c.name)) {
        let attr = class.visual[0];
        let query = format!("a photo of an object with {}", attribute_name(attr));
        let report = similarity_ranking_report(&model, &images, &query, images.len(), 0).unwrap();
        let scores: Vec<f64> = report.ranked.iter().map(|r| r.score).collect();
        let labels: Vec<bool> = report.ranked.iter().map(|r| w.present[&r.image].contains(&attr)).collect();
        // chance level is the positive rate
        let base = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        aps.push((ranked_ap(&scores, &labels).unwrap(), base));
    }
    let mean_ap = aps.iter().map(|a| a.0).sum::<f64>() / aps.len() as f64;
    let mean_base = aps.iter().map(|a| a.1).sum::<f64>() / aps.len() as f64;
    assert!(mean_ap > 2.0 * mean_base, "AP {mean_ap} vs chance {mean_base}");
}

/// A perceptron on raw features must separate every test class when images
/// are noise-free and show all their attributes.
#[test]
fn clean_world_is_linearly_separable() {
    let w = build_synthetic_world(&SyntheticParams { keep_prob: 1.0, noise: 0.0, seed: 8, ..Default::default() }).unwrap();
    let data: Vec<(Vec<f64>, usize)> = w
        .split
        .test
        .iter()
        .enumerate()
        .flat_map(|(k, c)| w.images[c].iter().map(move |r| (k, r)))
        .map(|(k, r)| (w.features.images.get(&r.id).unwrap().to_vec(), k))
        .collect();
    let classes = w.split.test.len();
    let dim = data[0].0.len();
    let mut weights = vec![vec![0.0; dim + 1]; classes];
    let score = |wk: &[f64], x: &[f64]| wk[dim] + wk.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let predict = |weights: &[Vec<f64>], x: &[f64]| {
        (0..classes).max_by(|&a, &b| score(&weights[a], x).total_cmp(&score(&weights[b], x))).unwrap()
    };
    for _ in 0..200 {
        let mut mistakes = 0;
        for (x, y) in &data {
            let p = predict(&weights, x);
            if p != *y {
                mistakes += 1;
                for (i, xi) in x.iter().chain(std::iter::once(&1.0)).enumerate() {
                    weights[*y][i] += xi;
                    weights[p][i] -= xi;
                }
            }
        }
        if mistakes == 0 {
            break;
        }
    }
    let correct = data.iter().filter(|(x, y)| predict(&weights, x) == *y).count();
    assert_eq!(correct, data.len());
}

#[test]
fn missing_checkpoint_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = written(tmp.path(), 0);
    let err = run_eval(&cfg, &tmp.path().join("nowhere"), None).unwrap_err();
    assert!(err.to_string().contains("nowhere"), "{err}");
    assert!(Checkpoint::load(&tmp.path().join("nowhere")).is_err());
}
