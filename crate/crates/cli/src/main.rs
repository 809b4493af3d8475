use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use auxmix::affinity::{masking_report, read_scores, score_checkpoint, split_pool, write_scores, ScoreMeta};
use auxmix::baselines::{run_baseline, BaselineKind, BaselineSpec};
use auxmix::datasets::DatasetOptions;
use auxmix::harness::{self, Clock, ExperimentConfig, SystemClock, TrainProvenance};
use auxmix::metrics::write_jsonl;
use auxmix::model::EncoderSpec;
use auxmix::pretext::{pretrain, PretextConfig};
use auxmix::scenarios::{build_scenario, load_scenario, save_scenario, AuxSpec, OverlapKind, ScenarioRequest};
use auxmix::trainer::{train, Init, TrainConfig, TrainInputs};
use auxmix::Checkpoint;

#[derive(Parser)]
#[command(name = "auxmix", version, about = "Semi-supervised training with an unconstrained auxiliary pool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario construction.
    Scenario {
        #[command(subcommand)]
        action: ScenarioCommand,
    },
    /// Rotation pretext training on labeled and auxiliary images.
    Pretrain {
        #[arg(long)]
        scenario: PathBuf,
        /// TOML pretext config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log path; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score the auxiliary pool against labeled prototypes and split it.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long)]
        out: PathBuf,
        /// Add the evaluation-only origin column and print a masking report.
        #[arg(long)]
        with_origins: bool,
    },
    /// Phase-2 training from a pretext checkpoint and a frozen split.
    Train {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// A reference method on the same scenario.
    Baseline(BaselineArgs),
    /// Run an experiment config end to end.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Aggregate completed runs into tables and plots.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    Build(BuildArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, default_value = "toy-shapes")]
    dataset: String,
    #[arg(long, value_delimiter = ',', required = true)]
    labeled_classes: Vec<String>,
    #[arg(long, default_value_t = 10)]
    labels_per_class: usize,
    /// Auxiliary source classes; may be empty for noise-only pools.
    #[arg(long, value_delimiter = ',')]
    aux: Vec<String>,
    /// Auxiliary samples per class; all remaining samples when omitted.
    #[arg(long)]
    aux_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    noise: usize,
    #[arg(long, value_parser = parse_overlap)]
    overlap: OverlapKind,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    /// Image side for generated datasets.
    #[arg(long, default_value_t = 32)]
    side: usize,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: BaselineKind,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    start_iteration: Option<usize>,
    #[arg(long)]
    loss_weight: Option<f64>,
    /// Encoder for fresh networks; defaults to the pretext architecture.
    #[arg(long)]
    arch: Option<String>,
    /// Initialise from this pretext checkpoint instead of a fresh network.
    #[arg(long)]
    pretext: Option<PathBuf>,
}

fn parse_overlap(s: &str) -> std::result::Result<OverlapKind, String> {
    match s {
        "partial" => Ok(OverlapKind::Partial),
        "none" => Ok(OverlapKind::None),
        "complete" => Ok(OverlapKind::Complete),
        other => Err(format!("expected partial, none or complete, got `{other}`")),
    }
}

fn parse_kind(s: &str) -> std::result::Result<BaselineKind, String> {
    s.parse().map_err(|e: auxmix::Error| e.to_string())
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Scenario { action: ScenarioCommand::Build(a) } => {
            let request = ScenarioRequest {
                dataset: a.dataset,
                dataset_options: DatasetOptions { side: a.side, data_dir: a.data_dir },
                labeled_classes: a.labeled_classes,
                labels_per_class: a.labels_per_class,
                aux: AuxSpec { classes: a.aux, per_class: a.aux_per_class, noise: a.noise },
                overlap: a.overlap,
                test_per_class: a.test_per_class,
                seed: a.seed,
            };
            let scenario = build_scenario(&request)?;
            save_scenario(&scenario, &a.out)?;
            println!("{} labeled, {} auxiliary, hash {}", scenario.labeled.len(), scenario.auxiliary.len(), scenario.content_hash());
        }
        Command::Pretrain { scenario, config, out, log } => {
            let scenario = load_scenario(&scenario)?;
            let config: PretextConfig = read_toml(config.as_deref())?;
            let outcome = pretrain(&scenario.training_view(), &config, &scenario.content_hash())?;
            outcome.checkpoint.save(&out)?;
            let log = log.unwrap_or_else(|| PathBuf::from(format!("{}.log.jsonl", out.display())));
            write_jsonl(&log, &outcome.log)?;
            println!("checkpoint {} ({})", out.display(), outcome.checkpoint.content_hash());
        }
        Command::Score { ckpt, scenario, beta, out, with_origins } => {
            let scenario = load_scenario(&scenario)?;
            let ck = Checkpoint::load(&ckpt)?;
            let (_, scores) = score_checkpoint(&ck, &scenario.training_view())?;
            let split = split_pool(&scores.records, beta)?;
            if split.degenerate {
                log::warn!("all scores are identical; beta has no effect");
            }
            let meta = ScoreMeta {
                scenario_hash: scenario.content_hash(),
                checkpoint_hash: ck.content_hash(),
                stats: split.stats,
                zero_norm_embeddings: scores.zero_norm_embeddings,
                split_hash: split.split.hash(),
                pool_size: split.split.pool_size,
            };
            let origins = scenario.origins();
            write_scores(&out, &split.records, with_origins.then_some(&origins[..]), &meta)?;
            println!("selected {} of {} (threshold {:.4})", split.split.positive.len(), split.split.pool_size, split.stats.threshold);
            if with_origins {
                let rep = masking_report(&split.records, &origins)?;
                println!("{}", serde_json::to_string_pretty(&rep)?);
            }
        }
        Command::Train { scenario, split, ckpt, config, out } => {
            let started_at = SystemClock.now();
            let scenario = load_scenario(&scenario)?;
            let (_, split, meta) = read_scores(&split)?;
            let ck = Checkpoint::load(&ckpt)?;
            let config: TrainConfig = read_toml(config.as_deref())?;
            let hash = scenario.content_hash();
            let inputs = TrainInputs { view: scenario.training_view(), split: &split, scenario_hash: &hash, split_meta: Some(&meta), init: Init::Pretrained(&ck) };
            let outcome = train(&inputs, &config)?;
            let provenance = TrainProvenance {
                method: "auxmix".into(),
                config: &config,
                scenario_hash: &hash,
                split_hash: Some(split.hash()),
                init_checkpoint_hash: Some(ck.content_hash()),
                started_at,
            };
            let record = harness::write_train_outputs(&out, provenance, &outcome, &SystemClock)?;
            println!("final {:.2}% best {:.2}%", record.final_accuracy, record.best_accuracy);
        }
        Command::Baseline(a) => {
            let started_at = SystemClock.now();
            let scenario = load_scenario(&a.scenario)?;
            let config: TrainConfig = read_toml(a.config.as_deref())?;
            let mut spec = BaselineSpec::of_kind(a.kind);
            spec.threshold = a.threshold.or(spec.threshold);
            spec.start_iteration = a.start_iteration.or(spec.start_iteration);
            spec.loss_weight = a.loss_weight.or(spec.loss_weight);
            let ck = a.pretext.as_deref().map(Checkpoint::load).transpose()?;
            spec.pretrained = ck.is_some();
            let arch = EncoderSpec::by_id(&a.arch.unwrap_or_else(|| PretextConfig::default().arch))?;
            let hash = scenario.content_hash();
            let outcome = run_baseline(&spec, &scenario.training_view(), &hash, &arch, ck.as_ref(), &config)?;
            let effective = spec.train_config(&config);
            let provenance = TrainProvenance {
                method: a.kind.as_str().into(),
                config: &effective,
                scenario_hash: &hash,
                split_hash: None,
                init_checkpoint_hash: ck.as_ref().map(Checkpoint::content_hash),
                started_at,
            };
            let record = harness::write_train_outputs(&a.out, provenance, &outcome, &SystemClock)?;
            println!("final {:.2}% best {:.2}%", record.final_accuracy, record.best_accuracy);
        }
        Command::Run { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let manifest = harness::run_experiment(&config, &out)?;
            for f in &manifest.failures {
                eprintln!("replicate {} failed in {}: {}", f.replicate, f.stage, f.message);
            }
            let run = harness::load_run(&out.join(&config.id))?;
            let report = harness::report(std::slice::from_ref(&run))?;
            harness::write_report(&report, &out.join(&config.id))?;
            print!("{}", report.markdown());
            if !manifest.succeeded() {
                bail!("{} replicate(s) failed", manifest.failures.len());
            }
        }
        Command::Report { runs, out } => {
            let loaded = runs.iter().map(|p| harness::load_run(p)).collect::<auxmix::Result<Vec<_>>>()?;
            let report = harness::report(&loaded)?;
            let files = harness::write_report(&report, &out)?;
            println!("wrote {}", files.markdown.display());
        }
    }
    Ok(())
}
