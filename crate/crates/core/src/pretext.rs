//! Phase 1: self-supervised rotation prediction over labeled and auxiliary images.

use serde::{Deserialize, Serialize};

use crate::augment::{rotate, weak, RotationAngle};
use crate::checkpoint::{json_hash, Checkpoint, CheckpointHeader, Phase, RngState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{hard_ce_rows, mean};
use crate::metrics::PretextRecord;
use crate::model::{EmaShadow, EncoderSpec, Network};
use crate::optim::{cosine_lr, DivergenceGuard, Sgd};
use crate::rng::{stream_rng, Stream};
use crate::sampler::EpochSampler;
use crate::scalar::{argmax, Scalar};
use crate::scenarios::TrainingView;

pub const ROTATION_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretextConfig {
    pub arch: String,
    pub iterations: usize,
    /// Source images per step; each contributes four rotated copies.
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub seed: u64,
    pub log_interval: usize,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            arch: "cnn6".into(),
            iterations: 2000,
            batch: 64,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            seed: 0,
            log_interval: 10,
        }
    }
}

impl PretextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.lr <= 0.0 || self.log_interval == 0 {
            return Err(Error::Config("pretext batch, lr and log_interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("pretext ema_decay, momentum or weight_decay out of range".into()));
        }
        EncoderSpec::by_id(&self.arch).map(|_| ())
    }
}

/// Every source image expanded into its four rotations, targets `0..4`.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextBatch {
    pub images: Vec<Image>,
    pub targets: Vec<usize>,
}

impl PretextBatch {
    pub fn expand(sources: &[&Image]) -> Result<Self> {
        let mut images = Vec::with_capacity(sources.len() * ROTATION_CLASSES);
        let mut targets = Vec::with_capacity(sources.len() * ROTATION_CLASSES);
        for src in sources {
            for angle in RotationAngle::ALL {
                images.push(rotate(src, angle)?);
                targets.push(angle.index());
            }
        }
        Ok(Self { images, targets })
    }

    pub fn refs(&self) -> Vec<&Image> {
        self.images.iter().collect()
    }
}

fn check_head(net: &Network) -> Result<()> {
    if net.head_width != ROTATION_CLASSES {
        return Err(Error::InvalidArgument(format!("rotation loss needs a 4-way head, found {}", net.head_width)));
    }
    Ok(())
}

/// Mean cross-entropy of the rotation index over all copies.
pub fn rotation_loss<T: Scalar>(net: &Network, params: &[T], batch: &PretextBatch) -> Result<T> {
    check_head(net)?;
    let logits = net.logits(params, &batch.refs())?;
    let loss = mean(&hard_ce_rows(&logits, ROTATION_CLASSES, &batch.targets, T::one(), None));
    finite(loss, batch)
}

/// Rotation loss plus its gradient, accumulated into `grad`.
pub fn rotation_objective<T: Scalar>(net: &Network, params: &[T], batch: &PretextBatch, grad: &mut [T]) -> Result<T> {
    check_head(net)?;
    let (logits, tape) = net.forward(params, &batch.refs())?;
    let n = batch.images.len();
    let mut dlogits = vec![T::zero(); logits.len()];
    let scale = T::one() / T::of_usize(n.max(1));
    let loss = mean(&hard_ce_rows(&logits, ROTATION_CLASSES, &batch.targets, scale, Some(&mut dlogits)));
    let loss = finite(loss, batch)?;
    net.backward(params, &tape, &dlogits, grad)?;
    Ok(loss)
}

fn finite<T: Scalar>(loss: T, batch: &PretextBatch) -> Result<T> {
    if loss.is_finite() {
        return Ok(loss);
    }
    let (lo, hi) = batch
        .images
        .iter()
        .flat_map(|i| i.data().iter().copied())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Err(Error::NumericalFault {
        location: "rotation loss".into(),
        detail: format!("loss {loss} on batch of {} copies (pixel range {lo}..{hi})", batch.images.len()),
    })
}

/// Fraction of rotated copies whose rotation index is predicted correctly.
pub fn rotation_accuracy<T: Scalar>(net: &Network, params: &[T], images: &[&Image]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in images.chunks(64) {
        let batch = PretextBatch::expand(chunk)?;
        let logits = net.logits(params, &batch.refs())?;
        for (row, &t) in logits.chunks_exact(ROTATION_CLASSES).zip(&batch.targets) {
            correct += (argmax(row) == t) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

#[derive(Debug, Clone)]
pub struct PretextOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub log: Vec<PretextRecord>,
}

/// Train the rotation model on `labeled ∪ auxiliary` images.
pub fn pretrain(view: &TrainingView<'_>, config: &PretextConfig, scenario_hash: &str) -> Result<PretextOutcome> {
    config.validate()?;
    let net = Network::new(EncoderSpec::by_id(&config.arch)?, view.shape, ROTATION_CLASSES)?;
    let mut params: Vec<f32> = net.init_params(config.seed);
    let mut ema = EmaShadow::new(config.ema_decay as f32, &params)?;
    let mut opt = Sgd::new(config.momentum, config.weight_decay, net.layout().decay_mask());
    let pool: Vec<&Image> = view.labeled.iter().map(|e| &e.image).chain(view.auxiliary.iter().copied()).collect();
    if pool.is_empty() {
        return Err(Error::InvalidArgument("pretext pool is empty".into()));
    }
    let mut sampler = EpochSampler::new(pool.len(), config.seed, Stream::PretextSampler);
    let mut guard = DivergenceGuard::default();
    let mut grad = vec![0.0f32; net.num_params()];
    let mut log = Vec::new();

    for it in 0..config.iterations {
        let mut rng = stream_rng(config.seed, Stream::PretextAugment, it as u64);
        // weak augmentation precedes rotation so targets depend only on the applied angle
        let sources: Vec<Image> = sampler.draw(it, config.batch).into_iter().map(|i| weak(pool[i], &mut rng)).collect();
        let batch = PretextBatch::expand(&sources.iter().collect::<Vec<_>>())?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = rotation_objective(&net, &params, &batch, &mut grad)? as f64;
        guard.observe(it, loss)?;
        let lr = cosine_lr(config.lr, it, config.iterations);
        opt.step(&mut params, &grad, lr)?;
        ema.update(&params)?;
        if it % config.log_interval == 0 || it + 1 == config.iterations {
            log.push(PretextRecord { iter: it, loss, lr });
        }
    }

    let header = CheckpointHeader {
        arch: net.encoder.clone(),
        input: net.input,
        head_width: ROTATION_CLASSES,
        dtype: f32::DTYPE.into(),
        phase: Phase::Pretext,
        config_hash: json_hash(config),
        scenario_hash: scenario_hash.to_string(),
        rng: RngState { seed: config.seed, iteration: config.iterations as u64 },
        num_params: net.num_params(),
    };
    Ok(PretextOutcome { checkpoint: Checkpoint { header, params, ema: ema.params }, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageShape;
    use crate::scalar::log_sum_exp;

    fn tiny_net() -> Network {
        Network::new(EncoderSpec::toy2(3), ImageShape::square(8), 4).unwrap()
    }

    fn images(n: usize) -> Vec<Image> {
        (0..n)
            .map(|k| {
                let shape = ImageShape::square(8);
                Image::new(shape, (0..shape.len()).map(|i| ((i * (k + 3)) % 17) as f32 / 16.0).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn batch_expands_to_four_copies_per_source() {
        let imgs = images(3);
        let b = PretextBatch::expand(&imgs.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(b.images.len(), 12);
        assert_eq!(b.targets, vec![0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn uniform_head_gives_ln4() {
        let net = tiny_net();
        let mut params: Vec<f64> = net.init_params(0);
        let enc = net.layout().encoder_len;
        params[enc..].iter_mut().for_each(|p| *p = 0.0);
        let imgs = images(2);
        let b = PretextBatch::expand(&imgs.iter().collect::<Vec<_>>()).unwrap();
        let loss = rotation_loss(&net, &params, &b).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        let net = tiny_net();
        let params: Vec<f64> = net.init_params(2);
        let imgs = images(3);
        let b = PretextBatch::expand(&imgs.iter().collect::<Vec<_>>()).unwrap();
        let mut acc = 0.0;
        for (img, &t) in b.images.iter().zip(&b.targets) {
            let l = net.logits(&params, &[img]).unwrap();
            acc += log_sum_exp(&l) - l[t];
        }
        let oracle = acc / 12.0;
        assert!((rotation_loss(&net, &params, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn wrong_head_is_rejected() {
        let net = Network::new(EncoderSpec::toy2(2), ImageShape::square(8), 3).unwrap();
        let params: Vec<f64> = net.init_params(0);
        let imgs = images(1);
        let b = PretextBatch::expand(&imgs.iter().collect::<Vec<_>>()).unwrap();
        assert!(rotation_loss(&net, &params, &b).is_err());
    }
}
