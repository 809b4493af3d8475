//! Config-driven experiments: scenario, pretext, scoring, training and
//! baselines per replicate, with a hash-chained manifest of every artifact.

mod report;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use report::{load_run, mean_std, report, write_report, LoadedRun, MaskingRow, MethodRow, Report, ReportFiles};

use crate::affinity::{masking_report, score_checkpoint, split_pool, write_scores, PoolSplit, ScoreMeta};
use crate::baselines::{run_baseline, BaselineKind, BaselineSpec};
use crate::checkpoint::{json_hash, sha256_hex, Checkpoint};
use crate::datasets::DatasetOptions;
use crate::error::{Error, Result};
use crate::metrics::write_jsonl;
use crate::model::EncoderSpec;
use crate::pretext::{pretrain, PretextConfig};
use crate::scenarios::{build_scenario, save_scenario, AuxSpec, OverlapKind, Scenario, ScenarioRequest};
use crate::trainer::{train, Init, TrainConfig, TrainInputs, TrainOutcome};

pub const RUN_FORMAT: &str = "auxmix-run";
pub const RUN_VERSION: u32 = 1;

/// Scenario block of an experiment; the seed comes from the replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBlock {
    pub dataset: String,
    #[serde(default)]
    pub dataset_options: DatasetOptions,
    pub labeled_classes: Vec<String>,
    pub labels_per_class: usize,
    pub aux: AuxSpec,
    pub overlap: OverlapKind,
    pub test_per_class: usize,
}

impl ScenarioBlock {
    pub fn request(&self, seed: u64) -> ScenarioRequest {
        ScenarioRequest {
            dataset: self.dataset.clone(),
            dataset_options: self.dataset_options.clone(),
            labeled_classes: self.labeled_classes.clone(),
            labels_per_class: self.labels_per_class,
            aux: self.aux.clone(),
            overlap: self.overlap,
            test_per_class: self.test_per_class,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Auxmix,
    /// Main method with the entropy term switched off.
    NoEntropy,
    /// Main method with every auxiliary sample in the selection set.
    NoMasking,
    Supervised,
    PseudoLabel,
    FixmatchStyle,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Auxmix => "auxmix",
            MethodKind::NoEntropy => "no_entropy",
            MethodKind::NoMasking => "no_masking",
            MethodKind::Supervised => "supervised",
            MethodKind::PseudoLabel => "pseudo_label",
            MethodKind::FixmatchStyle => "fixmatch_style",
        }
    }

    fn baseline(self) -> Option<BaselineKind> {
        match self {
            MethodKind::Supervised => Some(BaselineKind::Supervised),
            MethodKind::PseudoLabel => Some(BaselineKind::PseudoLabel),
            MethodKind::FixmatchStyle => Some(BaselineKind::FixmatchStyle),
            _ => None,
        }
    }

    fn uses_split(self) -> bool {
        matches!(self, MethodKind::Auxmix | MethodKind::NoEntropy)
    }
}

/// One method of an experiment. Baseline parameters left out take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub kind: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_weight: Option<f64>,
    #[serde(default)]
    pub pretrained: bool,
}

impl MethodEntry {
    pub fn new(kind: MethodKind) -> Self {
        Self { kind, name: None, beta: None, lr: None, threshold: None, start_iteration: None, loss_weight: None, pretrained: false }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let mut s = self.kind.as_str().to_string();
        if self.kind.uses_split() {
            s.push_str(&format!("(beta={})", self.beta.unwrap_or(0.0)));
        }
        if self.pretrained && self.kind.baseline().is_some() {
            s.push_str("+pretext");
        }
        s
    }

    pub fn needs_pretext(&self) -> bool {
        self.kind.baseline().is_none() || self.pretrained
    }

    pub fn baseline_spec(&self) -> Option<BaselineSpec> {
        let kind = self.kind.baseline()?;
        let mut spec = BaselineSpec::of_kind(kind);
        spec.pretrained = self.pretrained;
        if self.threshold.is_some() {
            spec.threshold = self.threshold;
        }
        if kind == BaselineKind::PseudoLabel {
            spec.start_iteration = self.start_iteration.or(spec.start_iteration);
            spec.loss_weight = self.loss_weight.or(spec.loss_weight);
        }
        Some(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepBlock {
    /// Each value adds a main-method run at that beta.
    #[serde(default)]
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    pub scenario: ScenarioBlock,
    #[serde(default)]
    pub pretext: PretextConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Architecture for networks trained without a pretext phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    #[serde(default)]
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub sweep: SweepBlock,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id == "." || self.id == ".." {
            return Err(Error::Config(format!("run id `{}` is not a plain directory name", self.id)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.all_methods().is_empty() {
            return Err(Error::Config("experiment lists no methods".into()));
        }
        let mut labels = BTreeSet::new();
        for m in self.all_methods() {
            if !labels.insert(m.label()) {
                return Err(Error::Config(format!("method `{}` listed twice", m.label())));
            }
            if let Some(spec) = m.baseline_spec() {
                spec.validate()?;
            }
        }
        self.pretext.validate()?;
        self.train.validate()?;
        EncoderSpec::by_id(self.arch_id()).map(|_| ())
    }

    pub fn arch_id(&self) -> &str {
        self.arch.as_deref().unwrap_or(&self.pretext.arch)
    }

    /// Listed methods followed by one main-method run per sweep value not already listed.
    pub fn all_methods(&self) -> Vec<MethodEntry> {
        let mut out = self.methods.clone();
        for &b in &self.sweep.beta {
            let m = MethodEntry::new(MethodKind::Auxmix).with_beta(b);
            if !out.iter().any(|x| x.label() == m.label()) {
                out.push(m);
            }
        }
        out
    }

    pub fn seed(&self, replicate: usize) -> u64 {
        self.base_seed + replicate as u64
    }
}

/// A file inside the run directory and its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn record(root: &Path, rel: &str) -> Result<Self> {
        let p = root.join(rel);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Self { path: rel.to_string(), sha256: sha256_hex(&bytes) })
    }

    pub fn verify(&self, root: &Path) -> Result<()> {
        let p = root.join(&self.path);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let found = sha256_hex(&bytes);
        if found != self.sha256 {
            return Err(Error::HashMismatch { what: self.path.clone(), expected: self.sha256.clone(), found });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingSummary {
    pub beta: f64,
    pub auroc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub selected: usize,
    pub total: usize,
    pub scores: Artifact,
    pub meta: Artifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub label: String,
    pub kind: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub metrics: Artifact,
    pub checkpoint: Artifact,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_hash: Option<String>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub replicate: usize,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub scenario: Artifact,
    pub scenario_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretext: Option<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretext_log: Option<Artifact>,
    pub masking: Vec<MaskingSummary>,
    pub runs: Vec<MethodRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub started_at: String,
    pub finished_at: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub replicates: Vec<ReplicateRecord>,
    pub failures: Vec<StageFailure>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
        if m.format != RUN_FORMAT {
            return Err(Error::corrupt(&path, "not a run manifest"));
        }
        if m.version != RUN_VERSION {
            return Err(Error::VersionMismatch { kind: "run manifest", found: m.version, expected: RUN_VERSION });
        }
        Ok(m)
    }

    /// Check every artifact digest against the files on disk.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for r in &self.replicates {
            r.scenario.verify(run_dir)?;
            for a in r.pretext.iter().chain(&r.pretext_log) {
                a.verify(run_dir)?;
            }
            for m in &r.masking {
                m.scores.verify(run_dir)?;
                m.meta.verify(run_dir)?;
            }
            for run in &r.runs {
                run.metrics.verify(run_dir)?;
                run.checkpoint.verify(run_dir)?;
            }
        }
        Ok(())
    }

    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn code_version() -> String {
    format!("auxmix-core {}", env!("CARGO_PKG_VERSION"))
}

fn beta_tag(beta: f64) -> String {
    format!("{beta}").replace('-', "m")
}

fn slug(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })
}

/// Timestamps for the manifest; everything else in a run is a function of the config.
pub trait Clock {
    fn now(&self) -> String;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

/// Run every replicate of `config` under `out_root/<id>/`.
pub fn run_experiment(config: &ExperimentConfig, out_root: &Path) -> Result<RunManifest> {
    run_experiment_with(config, out_root, &SystemClock)
}

pub fn run_experiment_with(config: &ExperimentConfig, out_root: &Path, clock: &dyn Clock) -> Result<RunManifest> {
    config.validate()?;
    let run_dir = out_root.join(&config.id);
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let started_at = clock.now();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for r in 0..config.replicates {
        log::info!("replicate {r} (seed {})", config.seed(r));
        match run_replicate(config, &run_dir, r) {
            Ok(rec) => replicates.push(rec),
            Err(e) => {
                let (stage, message) = match &e {
                    Error::Stage { stage, source } => (stage.clone(), source.to_string()),
                    other => ("replicate".to_string(), other.to_string()),
                };
                log::error!("replicate {r} failed in {stage}: {message}");
                failures.push(StageFailure { replicate: r, stage, message });
            }
        }
    }
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        version: RUN_VERSION,
        run_id: config.id.clone(),
        started_at,
        finished_at: clock.now(),
        code_version: code_version(),
        config: config.clone(),
        config_hash: json_hash(config),
        replicates,
        failures,
    };
    let path = run_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn run_replicate(config: &ExperimentConfig, run_dir: &Path, r: usize) -> Result<ReplicateRecord> {
    let seed = config.seed(r);
    let rel_dir = format!("r{r}");
    let dir = run_dir.join(&rel_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| format!("{rel_dir}/{name}");

    let scenario: Scenario = stage("scenario", build_scenario(&config.scenario.request(seed)))?;
    stage("scenario", save_scenario(&scenario, &run_dir.join(rel("scenario.json"))))?;
    let scenario_hash = scenario.content_hash();
    let view = scenario.training_view();
    let methods = config.all_methods();

    let mut record = ReplicateRecord {
        replicate: r,
        seed,
        scenario: Artifact::record(run_dir, &rel("scenario.json"))?,
        scenario_hash: scenario_hash.clone(),
        pretext: None,
        pretext_log: None,
        masking: Vec::new(),
        runs: Vec::new(),
    };

    let pretext = if methods.iter().any(MethodEntry::needs_pretext) {
        let cfg = PretextConfig { seed, ..config.pretext.clone() };
        let out = stage("pretext", pretrain(&view, &cfg, &scenario_hash))?;
        stage("pretext", out.checkpoint.save(&run_dir.join(rel("pretext.ckpt"))))?;
        stage("pretext", write_jsonl(&run_dir.join(rel("pretext_log.jsonl")), &out.log))?;
        record.pretext = Some(Artifact::record(run_dir, &rel("pretext.ckpt"))?);
        record.pretext_log = Some(Artifact::record(run_dir, &rel("pretext_log.jsonl"))?);
        Some(out.checkpoint)
    } else {
        None
    };

    // one frozen split per beta, from a single scoring pass
    let betas: Vec<f64> = {
        let mut b: Vec<f64> = methods.iter().filter(|m| m.kind.uses_split()).map(|m| m.beta.unwrap_or(0.0)).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    };
    let mut splits: Vec<(f64, PoolSplit)> = Vec::new();
    if let (Some(ck), false) = (&pretext, betas.is_empty()) {
        let (_, scores) = stage("score", score_checkpoint(ck, &view))?;
        let origins = scenario.origins();
        for &beta in &betas {
            let out = stage("split", split_pool(&scores.records, beta))?;
            let meta = ScoreMeta {
                scenario_hash: scenario_hash.clone(),
                checkpoint_hash: ck.content_hash(),
                stats: out.stats,
                zero_norm_embeddings: scores.zero_norm_embeddings,
                split_hash: out.split.hash(),
                pool_size: out.split.pool_size,
            };
            let name = rel(&format!("scores_beta{}.csv", beta_tag(beta)));
            stage("score", write_scores(&run_dir.join(&name), &out.records, Some(&origins), &meta))?;
            let rep = stage("masking", masking_report(&out.records, &origins))?;
            record.masking.push(MaskingSummary {
                beta,
                auroc: rep.auroc,
                precision: rep.precision,
                recall: rep.recall,
                selected: rep.selected,
                total: rep.total,
                scores: Artifact::record(run_dir, &name)?,
                meta: Artifact::record(run_dir, &format!("{name}.meta.json"))?,
            });
            splits.push((beta, out.split));
        }
    }

    let arch = EncoderSpec::by_id(config.arch_id())?;
    for m in &methods {
        let label = m.label();
        let mut cfg = TrainConfig { seed, ..config.train.clone() };
        if let Some(lr) = m.lr {
            cfg.lr = lr;
        }
        let stage_name = format!("train:{label}");
        let (outcome, split_hash): (TrainOutcome, Option<String>) = match (m.kind, m.baseline_spec()) {
            (_, Some(spec)) => {
                let out = stage(&stage_name, run_baseline(&spec, &view, &scenario_hash, &arch, pretext.as_ref(), &cfg))?;
                (out, None)
            }
            (kind, None) => {
                let ck: &Checkpoint<f32> = pretext.as_ref().expect("pretext ran for the main method");
                let all;
                let split: &PoolSplit = if kind == MethodKind::NoMasking {
                    all = PoolSplit::all_positive(view.auxiliary.len());
                    &all
                } else {
                    let beta = m.beta.unwrap_or(0.0);
                    &splits.iter().find(|(b, _)| *b == beta).expect("split per beta").1
                };
                if kind == MethodKind::NoEntropy {
                    cfg.lambda_minus = 0.0;
                }
                let inputs = TrainInputs { view: view.clone(), split, scenario_hash: &scenario_hash, split_meta: None, init: Init::Pretrained(ck) };
                (stage(&stage_name, train(&inputs, &cfg))?, Some(split.hash()))
            }
        };
        let base = rel(&slug(&label));
        let metrics = format!("{base}/metrics.jsonl");
        let checkpoint = format!("{base}/final.ckpt");
        stage(&stage_name, write_jsonl(&run_dir.join(&metrics), &outcome.log))?;
        stage(&stage_name, outcome.checkpoint.save(&run_dir.join(&checkpoint)))?;
        record.runs.push(MethodRun {
            label,
            kind: m.kind,
            beta: m.kind.uses_split().then(|| m.beta.unwrap_or(0.0)),
            metrics: Artifact::record(run_dir, &metrics)?,
            checkpoint: Artifact::record(run_dir, &checkpoint)?,
            config_hash: outcome.checkpoint.header.config_hash.clone(),
            split_hash,
            final_accuracy: outcome.final_accuracy,
            best_accuracy: outcome.best_accuracy,
            warnings: outcome.warnings,
        });
    }
    Ok(record)
}

pub const TRAIN_FORMAT: &str = "auxmix-train";

/// Manifest of a single phase-2 or baseline run launched outside an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub started_at: String,
    pub finished_at: String,
    pub code_version: String,
    pub config: TrainConfig,
    pub config_hash: String,
    pub scenario_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint_hash: Option<String>,
    pub metrics: Artifact,
    pub checkpoint: Artifact,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TrainRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let r: Self = serde_json::from_str(&text).map_err(|e| Error::corrupt(&path, e.to_string()))?;
        if r.format != TRAIN_FORMAT {
            return Err(Error::corrupt(&path, "not a training manifest"));
        }
        r.metrics.verify(dir)?;
        r.checkpoint.verify(dir)?;
        Ok(r)
    }
}

/// Inputs a single run is bound to.
pub struct TrainProvenance<'a> {
    pub method: String,
    pub config: &'a TrainConfig,
    pub scenario_hash: &'a str,
    pub split_hash: Option<String>,
    pub init_checkpoint_hash: Option<String>,
    pub started_at: String,
}

/// Write `metrics.jsonl`, `final.ckpt` and `manifest.json` into `dir`.
pub fn write_train_outputs(dir: &Path, provenance: TrainProvenance<'_>, outcome: &TrainOutcome, clock: &dyn Clock) -> Result<TrainRecord> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("metrics.jsonl"), &outcome.log)?;
    outcome.checkpoint.save(&dir.join("final.ckpt"))?;
    let record = TrainRecord {
        format: TRAIN_FORMAT.into(),
        version: RUN_VERSION,
        method: provenance.method,
        started_at: provenance.started_at,
        finished_at: clock.now(),
        code_version: code_version(),
        config: provenance.config.clone(),
        config_hash: json_hash(provenance.config),
        scenario_hash: provenance.scenario_hash.to_string(),
        split_hash: provenance.split_hash,
        init_checkpoint_hash: provenance.init_checkpoint_hash,
        metrics: Artifact::record(dir, "metrics.jsonl")?,
        checkpoint: Artifact::record(dir, "final.ckpt")?,
        final_accuracy: outcome.final_accuracy,
        best_accuracy: outcome.best_accuracy,
        warnings: outcome.warnings.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(record)
}

/// Resolve `runs/<id>` style paths given either a run directory or its manifest.
pub fn run_dir_of(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}
