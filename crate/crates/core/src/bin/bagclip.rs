use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bagclip::corpusgen::{
    export_vetting_sheet, generate_corpus, write_vetting_csv, ClassSpec, LlmClient, OpenAiProvider, ResponseCache,
    Source, TextCorpus, TextKind,
};
use bagclip::encoders::Checkpoint;
use bagclip::evaluator::{assemble_tasks, load_newt_tasks, newt_map, NewtItems};
use bagclip::runner::{
    build_synthetic_world, run_ablation, run_eval, run_template_training, run_training, ExperimentConfig,
    FeatureFile, SyntheticParams,
};

#[derive(Parser)]
#[command(name = "bagclip", version, about = "Fine-tune and evaluate dual encoders with class description bags")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fine-tune on the configured corpus and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train on template texts only (the CLIP^FT row).
        #[arg(long)]
        template: bool,
    },
    /// Four-way baseline comparison plus configured ablation rows.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Checkpoint trained on template texts; defaults to `--checkpoint`.
        #[arg(long)]
        template_checkpoint: Option<PathBuf>,
    },
    /// Text-kind ablation only.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic attribute world and a ready-to-run config.
    Synth {
        #[arg(long, default_value = "default")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Binary-task MAP over a task CSV.
    Newt {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled items per task; defaults to `newt_items.json` beside the task file.
        #[arg(long)]
        items: Option<PathBuf>,
        /// Image features; defaults to `features.json` beside the task file.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Use live instead of EMA weights.
        #[arg(long)]
        live: bool,
        /// Write the per-task `task,ap` CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Description corpus tools.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Query an LLM for every class and write the corpus JSON.
    Generate {
        #[arg(long)]
        dataset: String,
        /// JSON list of class specs.
        #[arg(long)]
        classes: PathBuf,
        #[arg(long, default_value = "visual,habitat,taxonomy")]
        kinds: String,
        #[arg(long, default_value = "openai")]
        provider: String,
        #[arg(long, default_value = "gpt-4-0613")]
        model: String,
        /// Source tag for models whose name does not reveal it.
        #[arg(long, value_parser = parse_source)]
        source: Option<Source>,
        #[arg(long, default_value = "https://api.openai.com/v1")]
        base_url: String,
        #[arg(long)]
        out: PathBuf,
        /// Answer from the cache only; a miss is an error.
        #[arg(long)]
        offline: bool,
    },
    /// Export a `class,text,correct` sheet for manual checking.
    Vet {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated class names.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_source(s: &str) -> Result<Source, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown source `{s}` (gpt4, gpt3, llama, human, template)"))
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn cache_root() -> PathBuf {
    std::env::var_os("BAGCLIP_CACHE").map_or_else(|| PathBuf::from(".bagclip_cache"), PathBuf::from)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn run(cli: Cli) -> AnyResult<()> {
    match cli.command {
        Command::Train { config, template } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (dir, result) = if template { run_template_training(&cfg)? } else { run_training(&cfg)? };
            if let (Some(first), Some(last)) = (result.log.first(), result.log.last()) {
                println!("loss_ft {:.4} -> {:.4} over {} steps", first.loss_ft, last.loss_ft, result.log.len());
            }
            println!("run written to {}", dir.display());
        }
        Command::Eval { config, checkpoint, template_checkpoint } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_eval(&cfg, &checkpoint, template_checkpoint.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Ablate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            for row in run_ablation(&cfg)? {
                let kinds: Vec<&str> = row.kinds.iter().map(|k| k.as_str()).collect();
                println!(
                    "{:<24} frozen {:>6.2}%  fine-tuned {:>6.2}%",
                    kinds.join("+"),
                    100.0 * row.frozen_accuracy,
                    100.0 * row.fine_tuned_accuracy
                );
            }
        }
        Command::Synth { preset, out, seed } => {
            if preset != "default" {
                return Err(format!("unknown preset `{preset}` (available: default)").into());
            }
            let world = build_synthetic_world(&SyntheticParams { seed, ..Default::default() })?;
            world.write(&out)?;
            println!("synthetic world written to {}", out.display());
        }
        Command::Newt { tasks, checkpoint, items, features, live, out } => {
            let rows = load_newt_tasks(&tasks)?;
            let items_path = items.unwrap_or_else(|| sibling(&tasks, "newt_items.json"));
            let items: NewtItems = serde_json::from_slice(&std::fs::read(items_path)?)?;
            let features = FeatureFile::load(&features.unwrap_or_else(|| sibling(&tasks, "features.json")))?;
            let ck = Checkpoint::load(&checkpoint)?;
            let model = bagclip::encoders::ToyModel::new(
                ck.weights(!live),
                std::sync::Arc::new(features.images),
                std::sync::Arc::new(ck.meta.featurizer.clone()),
            )?;
            let report = newt_map(&model, &assemble_tasks(&rows, &items)?, None)?;
            match out {
                Some(p) => std::fs::write(p, report.to_csv()?)?,
                None => print!("{}", report.to_csv()?),
            }
            eprintln!("MAP {:.4} over {} tasks", report.mean_ap, report.per_task.len());
        }
        Command::Corpus { command } => corpus(command)?,
    }
    Ok(())
}

fn corpus(command: CorpusCommand) -> AnyResult<()> {
    match command {
        CorpusCommand::Generate { dataset, classes, kinds, provider, model, source, base_url, out, offline } => {
            if provider != "openai" {
                return Err(format!("unknown provider `{provider}` (available: openai)").into());
            }
            let specs: Vec<ClassSpec> = serde_json::from_slice(&std::fs::read(classes)?)?;
            let kinds = TextKind::parse_list(&kinds)?;
            let source = source
                .or_else(|| Source::from_model(&model))
                .ok_or_else(|| format!("cannot infer a source tag from `{model}`; pass --source"))?;
            let key = if offline { String::new() } else { std::env::var("OPENAI_API_KEY").unwrap_or_default() };
            let client = LlmClient::new(Box::new(OpenAiProvider::new(&base_url, &key)?), &model, source)
                .with_cache(ResponseCache::open(cache_root())?)
                .offline(offline);
            let corpus = generate_corpus(&client, &dataset, &specs, &kinds)?;
            corpus.save(&out)?;
            println!("{} classes written to {}", corpus.classes.len(), out.display());
        }
        CorpusCommand::Vet { input, classes, out } => {
            let corpus = TextCorpus::load(&input)?;
            let classes = if classes.is_empty() { corpus.classes.keys().cloned().collect() } else { classes };
            let rows = export_vetting_sheet(&corpus, &classes)?;
            match out {
                Some(p) => write_vetting_csv(&rows, std::fs::File::create(p)?)?,
                None => write_vetting_csv(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
