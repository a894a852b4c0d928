use std::fs;
use std::path::{Path, PathBuf};

use super::{git_describe, sha256_file, ComparisonReport, Experiment, ExperimentConfig, Result, RunMetadata, RunnerError, TrainResult};
use crate::encoders::{Checkpoint, EncoderError};
use crate::evaluator::write_rankings_jsonl;

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const RUN_METADATA: &str = "run.json";
pub const TRAIN_LOG: &str = "log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TEMPLATE_CHECKPOINT_DIR: &str = "checkpoint_template";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const RESULTS_FILE: &str = "results.json";
pub const RANKINGS_FILE: &str = "rankings.jsonl";

/// Trains with the configured kinds and writes the run directory:
/// config snapshot, `run.json`, `log.jsonl` and `checkpoint/`.
pub fn run_training(cfg: &ExperimentConfig) -> Result<(PathBuf, TrainResult)> {
    let exp = Experiment::load(cfg)?;
    let result = exp.train()?;
    let dir = exp.output_dir();
    write_run(&exp, &dir, &result, CHECKPOINT_DIR)?;
    Ok((dir, result))
}

/// Same as [`run_training`] but on template texts only; the checkpoint goes
/// to `checkpoint_template/`.
pub fn run_template_training(cfg: &ExperimentConfig) -> Result<(PathBuf, TrainResult)> {
    let exp = Experiment::load(cfg)?;
    let result = exp.train_template()?;
    let dir = exp.output_dir();
    write_run(&exp, &dir, &result, TEMPLATE_CHECKPOINT_DIR)?;
    Ok((dir, result))
}

fn write_run(exp: &Experiment, dir: &Path, result: &TrainResult, ckpt: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut snapshot = exp.config.clone();
    // the snapshot must load from the run directory
    for p in [&mut snapshot.manifest, &mut snapshot.corpus, &mut snapshot.features, &mut snapshot.output_dir] {
        *p = absolute(&exp.config.resolve(p));
    }
    for p in [&mut snapshot.split, &mut snapshot.part_lexicon].into_iter().flatten() {
        *p = absolute(&exp.config.resolve(p));
    }
    snapshot.save(&dir.join(CONFIG_SNAPSHOT))?;
    let meta = RunMetadata {
        dataset: exp.config.dataset.clone(),
        seed: exp.config.seed,
        strategy: exp.config.strategy,
        corpus_sha256: sha256_file(&exp.config.resolve(&exp.config.corpus))?,
        git_describe: git_describe(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        hyper: exp.hyper,
    };
    fs::write(dir.join(RUN_METADATA), serde_json::to_string_pretty(&meta)? + "\n")?;
    let log_name = if ckpt == CHECKPOINT_DIR { TRAIN_LOG.to_string() } else { format!("{ckpt}.log.jsonl") };
    result.write_log(fs::File::create(dir.join(log_name))?)?;
    result.checkpoint.save(&dir.join(ckpt))?;
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        EncoderError::MissingCheckpoint(p) => RunnerError::MissingCheckpoint(p),
        other => other.into(),
    })
}

/// Four-way comparison (plus ablation rows when configured). Writes
/// `comparison.json`, `results.json` for the fine-tuned description row,
/// and `rankings.jsonl` when `ranking_n > 0`.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path, template_checkpoint: Option<&Path>) -> Result<ComparisonReport> {
    let exp = Experiment::load(cfg)?;
    let ft = load_checkpoint(checkpoint)?;
    let template = template_checkpoint.map(load_checkpoint).transpose()?;
    let mut report = exp.compare(&ft, template.as_ref())?;
    report.ablation = exp.ablation()?;
    let dir = exp.output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(COMPARISON_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    let texts = exp.test_texts(crate::evaluator::BaselineMode::ClipA, &exp.config.test_kinds)?;
    let ft_pair = ft.weights(exp.config.use_ema);
    fs::write(dir.join(RESULTS_FILE), exp.zero_shot(&ft_pair, &texts)?.results_json()?)?;
    if exp.config.ranking_n > 0 {
        let rankings = exp.rankings(&ft_pair, exp.config.ranking_n)?;
        write_rankings_jsonl(fs::File::create(dir.join(RANKINGS_FILE))?, &rankings)?;
    }
    Ok(report)
}

/// Only the text-kind ablation.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<super::AblationRow>> {
    let exp = Experiment::load(cfg)?;
    if exp.config.ablation_kinds.is_empty() {
        return Err(RunnerError::Config("ablation_kinds is empty".into()));
    }
    let rows = exp.ablation()?;
    let dir = exp.output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    Ok(rows)
}
