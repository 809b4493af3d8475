//! Reference trainers run through the same step code as the main method.

use serde::{Deserialize, Serialize};

use crate::affinity::PoolSplit;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::EncoderSpec;
use crate::scenarios::TrainingView;
use crate::trainer::{train, ConsistencyView, Init, TrainConfig, TrainInputs, TrainOutcome};

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Labeled data only.
    Supervised,
    /// Self-training on confident predictions over the whole pool.
    PseudoLabel,
    /// Weak-to-strong consistency with a confidence threshold over the whole pool.
    FixmatchStyle,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Supervised => "supervised",
            BaselineKind::PseudoLabel => "pseudo_label",
            BaselineKind::FixmatchStyle => "fixmatch_style",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "pseudo_label" | "pseudo-label" => Ok(Self::PseudoLabel),
            "fixmatch_style" | "fixmatch-style" | "fixmatch" => Ok(Self::FixmatchStyle),
            other => Err(Error::InvalidArgument(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_weight: Option<f64>,
    /// Start from the pretext encoder instead of a fresh network.
    #[serde(default)]
    pub pretrained: bool,
}

impl BaselineSpec {
    pub fn supervised() -> Self {
        Self { kind: BaselineKind::Supervised, threshold: None, start_iteration: None, loss_weight: None, pretrained: false }
    }

    pub fn pseudo_label() -> Self {
        Self { kind: BaselineKind::PseudoLabel, threshold: Some(DEFAULT_THRESHOLD), start_iteration: Some(0), loss_weight: Some(1.0), pretrained: false }
    }

    pub fn fixmatch_style() -> Self {
        Self { kind: BaselineKind::FixmatchStyle, threshold: Some(DEFAULT_THRESHOLD), start_iteration: None, loss_weight: None, pretrained: false }
    }

    pub fn of_kind(kind: BaselineKind) -> Self {
        match kind {
            BaselineKind::Supervised => Self::supervised(),
            BaselineKind::PseudoLabel => Self::pseudo_label(),
            BaselineKind::FixmatchStyle => Self::fixmatch_style(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (threshold, start, weight) = (self.threshold.is_some(), self.start_iteration.is_some(), self.loss_weight.is_some());
        let ok = match self.kind {
            BaselineKind::Supervised => !threshold && !start && !weight,
            BaselineKind::PseudoLabel => threshold && start && weight,
            BaselineKind::FixmatchStyle => threshold && !start && !weight,
        };
        if !ok {
            return Err(Error::Config(format!("parameters do not match baseline `{}`", self.kind.as_str())));
        }
        if self.threshold.is_some_and(|t| !(0.0..=1.0).contains(&t)) || self.loss_weight.is_some_and(|w| w < 0.0) {
            return Err(Error::Config("baseline threshold or loss weight out of range".into()));
        }
        Ok(())
    }

    /// The trainer configuration realising this baseline on top of `base`.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.lambda_minus = 0.0;
        c.consistency_start = 0;
        c.consistency_view = ConsistencyView::Strong;
        match self.kind {
            BaselineKind::Supervised => {
                c.lambda_plus = 0.0;
                c.threshold = None;
            }
            BaselineKind::PseudoLabel => {
                c.lambda_plus = self.loss_weight.unwrap_or(1.0);
                c.threshold = self.threshold;
                c.consistency_view = ConsistencyView::Weak;
                c.consistency_start = self.start_iteration.unwrap_or(0);
            }
            BaselineKind::FixmatchStyle => {
                c.lambda_plus = base.lambda_plus;
                c.threshold = self.threshold;
            }
        }
        c
    }

    /// Supervised training never sees the pool; the others use all of it unmasked.
    pub fn split(&self, pool_size: usize) -> PoolSplit {
        match self.kind {
            BaselineKind::Supervised => PoolSplit::empty(),
            _ => PoolSplit::all_positive(pool_size),
        }
    }
}

pub fn run_baseline(
    spec: &BaselineSpec,
    view: &TrainingView<'_>,
    scenario_hash: &str,
    arch: &EncoderSpec,
    pretext: Option<&Checkpoint<f32>>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    let init = match (spec.pretrained, pretext) {
        (true, Some(ck)) => Init::Pretrained(ck),
        (true, None) => return Err(Error::InvalidArgument("pretrained baseline needs a pretext checkpoint".into())),
        (false, _) => Init::Scratch(arch),
    };
    let split = spec.split(view.auxiliary.len());
    let inputs = TrainInputs { view: view.clone(), split: &split, scenario_hash, split_meta: None, init };
    train(&inputs, &spec.train_config(config))
}
