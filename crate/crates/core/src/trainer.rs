//! Phase 2: supervised loss on labeled data, pseudo-label consistency on the
//! selection set and uniform-target regularization on the rejected set.

use serde::{Deserialize, Serialize};

use crate::affinity::{PoolSplit, ScoreMeta};
use crate::augment::{strong, weak};
use crate::checkpoint::{json_hash, Checkpoint, CheckpointHeader, Phase, RngState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{hard_ce_rows, mean, prediction_entropy, pseudo_labels, uniform_ce_rows};
use crate::metrics::MetricsRecord;
use crate::model::{EmaShadow, EncoderSpec, Network};
use crate::optim::{cosine_lr, DivergenceGuard, Sgd};
use crate::rng::{stream_rng, Stream};
use crate::sampler::EpochSampler;
use crate::scalar::{argmax, Scalar};
use crate::scenarios::{LabeledExample, TrainingView};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Cosine decay from `lr` to zero over the iteration budget, no warmup.
    #[default]
    Cosine,
}

/// Which view of a selected sample the pseudo-label is fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyView {
    #[default]
    Strong,
    /// The weak view that produced the pseudo-label (classic self-training).
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub labeled_batch: usize,
    pub aux_batch_ratio: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub iterations: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub eval_interval: usize,
    pub log_interval: usize,
    /// Confidence a pseudo-label needs to contribute; `None` keeps every one.
    pub threshold: Option<f64>,
    pub consistency_view: ConsistencyView,
    /// Iterations before the consistency term switches on.
    pub consistency_start: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_plus: 1.0,
            lambda_minus: 1.0,
            labeled_batch: 64,
            aux_batch_ratio: 7,
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            iterations: 5000,
            schedule: Schedule::Cosine,
            seed: 0,
            eval_interval: 500,
            log_interval: 10,
            threshold: None,
            consistency_view: ConsistencyView::Strong,
            consistency_start: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if self.labeled_batch == 0 || self.aux_batch_ratio == 0 {
            return bad("labeled_batch and aux_batch_ratio must be at least 1");
        }
        if !(self.lr > 0.0) || self.eval_interval == 0 || self.log_interval == 0 {
            return bad("lr, eval_interval and log_interval must be positive");
        }
        if !(self.lambda_plus >= 0.0 && self.lambda_minus >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..=1.0).contains(&self.ema_decay) || self.weight_decay < 0.0 {
            return bad("momentum, ema_decay or weight_decay out of range");
        }
        if self.threshold.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn aux_batch(&self) -> usize {
        self.aux_batch_ratio * self.labeled_batch
    }

    pub fn weights_at(&self, iteration: usize) -> LossWeights {
        LossWeights {
            lambda_plus: if iteration < self.consistency_start { 0.0 } else { self.lambda_plus },
            lambda_minus: self.lambda_minus,
            threshold: self.threshold,
            consistency_view: self.consistency_view,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub threshold: Option<f64>,
    pub consistency_view: ConsistencyView,
}

impl LossWeights {
    pub fn new(lambda_plus: f64, lambda_minus: f64) -> Self {
        Self { lambda_plus, lambda_minus, threshold: None, consistency_view: ConsistencyView::Strong }
    }
}

/// Augmented views for one step: `B` labeled, `mu B` selected, `mu B` rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub labeled: Vec<Image>,
    pub labels: Vec<usize>,
    pub positive_weak: Vec<Image>,
    pub positive_strong: Vec<Image>,
    pub negative_weak: Vec<Image>,
    pub negative_strong: Vec<Image>,
}

/// Seeded streams feeding [`StepBatch`]es from the frozen split.
pub struct BatchSource<'a> {
    labeled: &'a [LabeledExample],
    positive: Vec<&'a Image>,
    negative: Vec<&'a Image>,
    seed: u64,
    labeled_batch: usize,
    aux_batch: usize,
    labeled_sampler: EpochSampler,
    positive_sampler: EpochSampler,
    negative_sampler: EpochSampler,
}

impl<'a> BatchSource<'a> {
    pub fn new(view: &TrainingView<'a>, split: &PoolSplit, config: &TrainConfig) -> Self {
        let pick = |idx: &[usize]| idx.iter().map(|&i| view.auxiliary[i]).collect::<Vec<_>>();
        let (positive, negative) = (pick(&split.positive), pick(&split.negative));
        let seed = config.seed;
        Self {
            labeled: view.labeled,
            labeled_sampler: EpochSampler::new(view.labeled.len(), seed, Stream::LabeledSampler),
            positive_sampler: EpochSampler::new(positive.len(), seed, Stream::PositiveSampler),
            negative_sampler: EpochSampler::new(negative.len(), seed, Stream::NegativeSampler),
            positive,
            negative,
            seed,
            labeled_batch: config.labeled_batch,
            aux_batch: config.aux_batch(),
        }
    }

    /// Coverage warnings for sets smaller than their per-step batch.
    pub fn coverage_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, s, size) in [
            ("labeled", &self.labeled_sampler, self.labeled_batch),
            ("selection", &self.positive_sampler, self.aux_batch),
            ("regularization", &self.negative_sampler, self.aux_batch),
        ] {
            if s.undersized(size) {
                out.push(format!("{name} set has {} samples for a batch of {size}; sampling with replacement", s.len()));
            }
        }
        out
    }

    pub fn batch(&mut self, iteration: usize) -> StepBatch {
        let it = iteration as u64;
        let mut rng = stream_rng(self.seed, Stream::LabeledAugment, it);
        let idx = self.labeled_sampler.draw(iteration, self.labeled_batch);
        let labeled = idx.iter().map(|&i| weak(&self.labeled[i].image, &mut rng)).collect();
        let labels = idx.iter().map(|&i| self.labeled[i].label).collect();

        let views = |pool: &[&Image], sampler: &mut EpochSampler, stream: Stream| {
            let mut rng = stream_rng(self.seed, stream, it);
            let (mut w, mut s) = (Vec::new(), Vec::new());
            for i in sampler.draw(iteration, self.aux_batch) {
                w.push(weak(pool[i], &mut rng));
                s.push(strong(pool[i], &mut rng));
            }
            (w, s)
        };
        let (positive_weak, positive_strong) = views(&self.positive, &mut self.positive_sampler, Stream::PositiveAugment);
        let (negative_weak, negative_strong) = views(&self.negative, &mut self.negative_sampler, Stream::NegativeAugment);
        StepBatch { labeled, labels, positive_weak, positive_strong, negative_weak, negative_strong }
    }

    pub fn labeled_epoch_len(&self) -> usize {
        self.labeled.len().div_ceil(self.labeled_batch).max(1)
    }
}

fn refs(images: &[Image]) -> Vec<&Image> {
    images.iter().collect()
}

fn check_finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericalFault { location: term.into(), detail: format!("loss = {value}") })
    }
}

/// `(1/B) sum H(y, f(x))` over already-augmented labeled images.
pub fn supervised_loss<T: Scalar>(net: &Network, params: &[T], images: &[&Image], labels: &[usize]) -> Result<T> {
    let logits = net.logits(params, images)?;
    let loss = mean(&hard_ce_rows(&logits, net.head_width, labels, T::one(), None));
    check_finite(loss.as_f64(), "supervised loss")?;
    Ok(loss)
}

/// Pseudo-labels from the weak view, their confidences and the contribution mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
    pub mask: Vec<bool>,
    pub entropy: f64,
}

impl PseudoLabels {
    pub fn histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        self.labels.iter().for_each(|&k| h[k] += 1);
        h
    }

    pub fn mask_rate(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Hard labels from a forward pass that is never differentiated.
pub fn pseudo_label<T: Scalar>(net: &Network, params: &[T], weak_views: &[&Image], threshold: Option<f64>) -> Result<PseudoLabels> {
    let logits = net.logits(params, weak_views)?;
    let pl = pseudo_labels(&logits, net.head_width);
    Ok(PseudoLabels {
        labels: pl.iter().map(|p| p.class).collect(),
        confidence: pl.iter().map(|p| p.confidence).collect(),
        mask: pl.iter().map(|p| threshold.is_none_or(|t| p.passes(t))).collect(),
        entropy: mean(&prediction_entropy(&logits, net.head_width)).as_f64(),
    })
}

/// `(1/muB) sum mask_i H(yhat_i, f(x_i))`, adding `scale * d/dlogits` when requested.
fn masked_ce<T: Scalar>(logits: &[T], width: usize, pl: &PseudoLabels, scale: T, mut dlogits: Option<&mut [T]>) -> T {
    let n = pl.labels.len();
    let norm = T::one() / T::of_usize(n.max(1));
    let mut total = T::zero();
    for (r, row) in logits.chunks_exact(width).enumerate() {
        if !pl.mask[r] {
            continue;
        }
        let d = dlogits.as_deref_mut().map(|d| &mut d[r * width..(r + 1) * width]);
        total += hard_ce_rows(row, width, &pl.labels[r..=r], scale * norm, d)[0];
    }
    total * norm
}

/// Consistency term for a selected sub-batch: pseudo-labels from `weak_views`, fitted on `views`.
pub fn consistency_loss<T: Scalar>(net: &Network, params: &[T], weak_views: &[&Image], views: &[&Image], threshold: Option<f64>) -> Result<(T, PseudoLabels)> {
    let pl = pseudo_label(net, params, weak_views, threshold)?;
    let logits = net.logits(params, views)?;
    let loss = masked_ce(&logits, net.head_width, &pl, T::one(), None);
    check_finite(loss.as_f64(), "consistency loss")?;
    Ok((loss, pl))
}

/// `(1/muB) sum [H(u, f(weak)) + H(u, f(strong))]` with `u` uniform.
pub fn regularization_loss<T: Scalar>(net: &Network, params: &[T], weak_views: &[&Image], strong_views: &[&Image]) -> Result<T> {
    let n = weak_views.len();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut all = weak_views.to_vec();
    all.extend_from_slice(strong_views);
    let logits = net.logits(params, &all)?;
    let per_row = uniform_ce_rows(&logits, net.head_width, T::one(), None);
    let loss = per_row.iter().copied().sum::<T>() / T::of_usize(n);
    check_finite(loss.as_f64(), "regularization loss")?;
    Ok(loss)
}

/// Component losses of one step plus pseudo-label diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub supervised: f64,
    pub consistency: f64,
    pub regularization: f64,
    pub pseudo: Option<PseudoLabels>,
}

/// `L = L_x + lambda_plus L_u+ + lambda_minus L_u-` and, when `grad` is given,
/// its gradient accumulated into `grad`. Terms with zero weight are evaluated
/// without a backward pass; empty sub-batches contribute zero.
pub fn objective<T: Scalar>(net: &Network, params: &[T], batch: &StepBatch, weights: &LossWeights, grad: Option<&mut [T]>) -> Result<StepLosses> {
    let k = net.head_width;
    let pseudo = if batch.positive_weak.is_empty() {
        None
    } else {
        Some(pseudo_label(net, params, &refs(&batch.positive_weak), weights.threshold)?)
    };
    let positive_views = match weights.consistency_view {
        ConsistencyView::Strong => &batch.positive_strong,
        ConsistencyView::Weak => &batch.positive_weak,
    };
    let n_neg = batch.negative_weak.len();
    let differentiate = grad.is_some();
    let any_masked_in = pseudo.as_ref().is_some_and(|p| p.mask.contains(&true));
    let pos_active = differentiate && any_masked_in && weights.lambda_plus != 0.0;
    let neg_active = differentiate && n_neg > 0 && weights.lambda_minus != 0.0;

    // gradient pass over the labeled views and every weighted term
    let mut images = refs(&batch.labeled);
    let n_lab = images.len();
    if pos_active {
        images.extend(positive_views.iter());
    }
    if neg_active {
        images.extend(batch.negative_weak.iter().chain(&batch.negative_strong));
    }

    let (logits, tape) = if differentiate {
        let (l, t) = net.forward(params, &images)?;
        (l, Some(t))
    } else {
        (net.logits(params, &images)?, None)
    };
    let mut dlogits = differentiate.then(|| vec![T::zero(); logits.len()]);
    let (lab_logits, rest) = logits.split_at(n_lab * k);
    let (lab_d, rest_d) = match dlogits.as_deref_mut() {
        Some(d) => {
            let (a, b) = d.split_at_mut(n_lab * k);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let sup_scale = T::one() / T::of_usize(n_lab.max(1));
    let supervised = mean(&hard_ce_rows(lab_logits, k, &batch.labels, sup_scale, lab_d)).as_f64();

    let n_pos = positive_views.len();
    let (pos_logits, neg_logits) = rest.split_at(if pos_active { n_pos * k } else { 0 });
    let (pos_d, neg_d) = match rest_d {
        Some(d) => {
            let (a, b) = d.split_at_mut(if pos_active { n_pos * k } else { 0 });
            (Some(a), Some(b))
        }
        None => (None, None),
    };

    let consistency = match &pseudo {
        None => 0.0,
        Some(pl) if pos_active => masked_ce(pos_logits, k, pl, T::lit(weights.lambda_plus), pos_d).as_f64(),
        Some(pl) => masked_ce(&net.logits(params, &refs(positive_views))?, k, pl, T::one(), None).as_f64(),
    };

    let regularization = if n_neg == 0 {
        0.0
    } else if neg_active {
        let scale = T::lit(weights.lambda_minus) / T::of_usize(n_neg);
        let rows = uniform_ce_rows(neg_logits, k, scale, neg_d);
        (rows.iter().copied().sum::<T>() / T::of_usize(n_neg)).as_f64()
    } else {
        regularization_loss(net, params, &refs(&batch.negative_weak), &refs(&batch.negative_strong))?.as_f64()
    };

    check_finite(supervised, "supervised loss")?;
    check_finite(consistency, "consistency loss")?;
    check_finite(regularization, "regularization loss")?;
    if let (Some(g), Some(tape), Some(d)) = (grad, tape, dlogits) {
        net.backward(params, &tape, &d, g)?;
    }
    let total = supervised + weights.lambda_plus * consistency + weights.lambda_minus * regularization;
    Ok(StepLosses { total, supervised, consistency, regularization, pseudo })
}

/// Mutable optimisation state of a run.
pub struct TrainState<T> {
    pub params: Vec<T>,
    pub ema: EmaShadow<T>,
    pub optimizer: Sgd<T>,
    grad: Vec<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(net: &Network, params: Vec<T>, config: &TrainConfig) -> Result<Self> {
        net.check_params(&params)?;
        Ok(Self {
            ema: EmaShadow::new(T::lit(config.ema_decay), &params)?,
            optimizer: Sgd::new(config.momentum, config.weight_decay, net.layout().decay_mask()),
            grad: vec![T::zero(); params.len()],
            params,
        })
    }
}

/// One SGD step on `L` followed by the EMA update.
pub fn train_step<T: Scalar>(net: &Network, state: &mut TrainState<T>, batch: &StepBatch, weights: &LossWeights, lr: f64) -> Result<StepLosses> {
    state.grad.iter_mut().for_each(|g| *g = T::zero());
    let losses = objective(net, &state.params, batch, weights, Some(&mut state.grad))?;
    state.optimizer.step(&mut state.params, &state.grad, lr)?;
    state.ema.update(&state.params)?;
    Ok(losses)
}

/// Top-1 accuracy in percent.
pub fn evaluate<T: Scalar>(net: &Network, params: &[T], examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in examples.chunks(256) {
        let images: Vec<&Image> = chunk.iter().map(|e| &e.image).collect();
        let logits = net.logits(params, &images)?;
        correct += logits.chunks_exact(net.head_width).zip(chunk).filter(|(row, e)| argmax(row) == e.label).count();
    }
    Ok(100.0 * correct as f64 / examples.len() as f64)
}

/// Where phase-2 weights start.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    /// Encoder from the EMA shadow of a pretext checkpoint, fresh head.
    Pretrained(&'a Checkpoint<f32>),
    /// Freshly initialised network.
    Scratch(&'a EncoderSpec),
}

pub struct TrainInputs<'a> {
    pub view: TrainingView<'a>,
    pub split: &'a PoolSplit,
    pub scenario_hash: &'a str,
    /// Provenance of a split loaded from disk.
    pub split_meta: Option<&'a ScoreMeta>,
    pub init: Init<'a>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub log: Vec<MetricsRecord>,
    /// `(iteration, EMA test accuracy)` at every evaluation.
    pub evaluations: Vec<(usize, f64)>,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub warnings: Vec<String>,
}

fn mismatch(what: &str, expected: &str, found: &str) -> Error {
    Error::HashMismatch { what: what.into(), expected: expected.into(), found: found.into() }
}

fn verify_inputs(inputs: &TrainInputs<'_>) -> Result<()> {
    let split = inputs.split;
    let pool = inputs.view.auxiliary.len();
    if !split.is_partition() || (split.pool_size != pool && split.pool_size != 0) {
        return Err(Error::InvalidArgument(format!("split covers {} samples, pool has {pool}", split.pool_size)));
    }
    if let Init::Pretrained(ck) = inputs.init {
        if ck.header.phase != Phase::Pretext {
            return Err(Error::CheckpointMismatch("phase-2 training needs a pretext checkpoint".into()));
        }
        if ck.header.scenario_hash != inputs.scenario_hash {
            return Err(mismatch("checkpoint scenario", inputs.scenario_hash, &ck.header.scenario_hash));
        }
    }
    if let Some(meta) = inputs.split_meta {
        if meta.scenario_hash != inputs.scenario_hash {
            return Err(mismatch("split scenario", inputs.scenario_hash, &meta.scenario_hash));
        }
        let found = split.hash();
        if meta.split_hash != found {
            return Err(mismatch("split", &meta.split_hash, &found));
        }
        if let Init::Pretrained(ck) = inputs.init {
            let h = ck.content_hash();
            if meta.checkpoint_hash != h {
                return Err(mismatch("split checkpoint", &meta.checkpoint_hash, &h));
            }
        }
    }
    Ok(())
}

/// Build the phase-2 network and its starting parameters.
pub fn initial_model(init: Init<'_>, view: &TrainingView<'_>, seed: u64) -> Result<(Network, Vec<f32>)> {
    match init {
        Init::Pretrained(ck) => ck.network()?.swap_head(&ck.ema, view.num_classes, seed),
        Init::Scratch(arch) => {
            let net = Network::new(arch.clone(), view.shape, view.num_classes)?;
            let params = net.init_params(seed);
            Ok((net, params))
        }
    }
}

pub fn train(inputs: &TrainInputs<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    verify_inputs(inputs)?;
    let view = &inputs.view;
    if view.labeled.is_empty() {
        return Err(Error::InvalidArgument("labeled set is empty".into()));
    }
    let (net, params) = initial_model(inputs.init, view, config.seed)?;
    let mut state = TrainState::new(&net, params, config)?;
    let mut source = BatchSource::new(view, inputs.split, config);
    let warnings = source.coverage_warnings();
    warnings.iter().for_each(|w| log::warn!("{w}"));
    let split_hash = inputs.split.hash();
    let epoch = source.labeled_epoch_len();
    let mut guard = DivergenceGuard::default();
    let mut log = Vec::new();
    let mut evaluations = Vec::new();

    if config.iterations == 0 {
        let losses = objective(&net, &state.params, &source.batch(0), &config.weights_at(0), None)?;
        let acc = evaluate(&net, &state.ema.params, view.test)?;
        evaluations.push((0, acc));
        log.push(record(0, &losses, config.lr, Some(acc)));
    }
    for it in 0..config.iterations {
        if it % epoch == 0 && inputs.split.hash() != split_hash {
            return Err(mismatch("split (changed during training)", &split_hash, &inputs.split.hash()));
        }
        let lr = match config.schedule {
            Schedule::Cosine => cosine_lr(config.lr, it, config.iterations),
        };
        let batch = source.batch(it);
        let losses = train_step(&net, &mut state, &batch, &config.weights_at(it), lr)?;
        guard.observe(it, losses.total)?;
        let done = it + 1;
        let acc = if done % config.eval_interval == 0 || done == config.iterations {
            let a = evaluate(&net, &state.ema.params, view.test)?;
            evaluations.push((done, a));
            Some(a)
        } else {
            None
        };
        if it % config.log_interval == 0 || acc.is_some() {
            log.push(record(done, &losses, lr, acc));
        }
    }

    let final_accuracy = evaluations.last().map_or(0.0, |e| e.1);
    let best_accuracy = evaluations.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let header = CheckpointHeader {
        arch: net.encoder.clone(),
        input: net.input,
        head_width: net.head_width,
        dtype: f32::DTYPE.into(),
        phase: Phase::Target,
        config_hash: json_hash(config),
        scenario_hash: inputs.scenario_hash.to_string(),
        rng: RngState { seed: config.seed, iteration: config.iterations as u64 },
        num_params: net.num_params(),
    };
    let checkpoint = Checkpoint { header, params: state.params, ema: state.ema.params };
    Ok(TrainOutcome { checkpoint, log, evaluations, best_accuracy, final_accuracy, warnings })
}

fn record(iter: usize, l: &StepLosses, lr: f64, acc: Option<f64>) -> MetricsRecord {
    let r = MetricsRecord {
        iter,
        total: l.total,
        supervised: l.supervised,
        consistency: l.consistency,
        regularization: l.regularization,
        lr,
        pseudo_entropy: l.pseudo.as_ref().map(|p| p.entropy),
        mask_rate: l.pseudo.as_ref().map(PseudoLabels::mask_rate),
        test_acc: None,
        test_err: None,
    };
    match acc {
        Some(a) => r.with_accuracy(a),
        None => r,
    }
}
