#![allow(dead_code)]

use auxmix::datasets::DatasetOptions;
use auxmix::image::{Image, ImageShape};
use auxmix::model::{EncoderSpec, Network};
use auxmix::pretext::{rotation_loss, rotation_objective, PretextBatch, PretextConfig};
use auxmix::scenarios::{build_scenario, AuxSpec, OverlapKind, Scenario, ScenarioRequest};
use auxmix::trainer::{consistency_loss, objective, regularization_loss, supervised_loss, LossWeights, StepBatch, TrainConfig};

pub fn request(seed: u64) -> ScenarioRequest {
    ScenarioRequest {
        dataset: "toy-shapes".into(),
        dataset_options: DatasetOptions { side: 8, data_dir: None },
        labeled_classes: vec!["A".into(), "F".into(), "T".into()],
        labels_per_class: 4,
        aux: AuxSpec { classes: vec!["A".into(), "R".into()], per_class: Some(5), noise: 3 },
        overlap: OverlapKind::Partial,
        test_per_class: 6,
        seed,
    }
}

pub fn scenario(seed: u64) -> Scenario {
    build_scenario(&request(seed)).unwrap()
}

pub fn pretext_config(seed: u64) -> PretextConfig {
    PretextConfig { arch: "toy2-4".into(), iterations: 6, batch: 4, lr: 0.05, seed, log_interval: 1, ..Default::default() }
}

pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig { labeled_batch: 4, aux_batch_ratio: 2, iterations: 6, eval_interval: 3, log_interval: 1, seed, ..Default::default() }
}

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

/// Per-coordinate relative error. Coordinates more than three orders of magnitude
/// below the largest gradient entry are measured against that floor instead, where
/// central-difference rounding would otherwise dominate.
fn worst_relative_error(params: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-7);
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for i in 0..params.len() {
        p[i] = params[i] + FD_STEP;
        let up = f(&p);
        p[i] = params[i] - FD_STEP;
        let down = f(&p);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}


pub fn shape() -> ImageShape {
    ImageShape::square(8)
}

pub fn image(k: usize) -> Image {
    let s = shape();
    Image::new(s, (0..s.len()).map(|i| (((i * 7 + k * 13) % 23) as f32) / 22.0).collect()).unwrap()
}

pub fn images(from: usize, n: usize) -> Vec<Image> {
    (from..from + n).map(image).collect()
}

/// A two-stage encoder with a sharpened head, so softmax outputs are far from uniform.
pub fn setup() -> (Network, Vec<f64>) {
    let spec = EncoderSpec { arch: "check".into(), stages: vec![vec![3, 2], vec![4]] };
    let net = Network::new(spec, shape(), 3).unwrap();
    let mut params: Vec<f64> = net.init_params(5);
    let enc = net.layout().encoder_len;
    params[enc..].iter_mut().for_each(|p| *p *= 30.0);
    (net, params)
}

pub fn batch() -> StepBatch {
    StepBatch {
        labeled: images(0, 3),
        labels: vec![0, 2, 1],
        positive_weak: images(10, 4),
        positive_strong: images(20, 4),
        negative_weak: images(30, 4),
        negative_strong: images(40, 4),
    }
}

pub fn objective_grad(net: &Network, params: &[f64], b: &StepBatch, w: &LossWeights) -> Vec<f64> {
    let mut g = vec![0.0; params.len()];
    objective(net, params, b, w, Some(&mut g)).unwrap();
    g
}

pub fn rotation_error() -> f64 {
    let spec = EncoderSpec { arch: "check".into(), stages: vec![vec![3, 2], vec![4]] };
    let net = Network::new(spec, shape(), 4).unwrap();
    let params: Vec<f64> = net.init_params(7);
    let srcs = images(0, 2);
    let b = PretextBatch::expand(&srcs.iter().collect::<Vec<_>>()).unwrap();
    let mut g = vec![0.0; params.len()];
    rotation_objective(&net, &params, &b, &mut g).unwrap();
    worst_relative_error(&params, &g, |p| rotation_loss(&net, p, &b).unwrap())
}

pub fn supervised_error() -> f64 {
    let (net, params) = setup();
    let b = batch();
    let g = objective_grad(&net, &params, &b, &LossWeights::new(0.0, 0.0));
    let imgs: Vec<&Image> = b.labeled.iter().collect();
    worst_relative_error(&params, &g, |p| supervised_loss(&net, p, &imgs, &b.labels).unwrap())
}

/// Gradient of one weighted term, isolated by differencing against the supervised-only objective.
fn term_grad(net: &Network, params: &[f64], b: &StepBatch, w: LossWeights) -> Vec<f64> {
    let with = objective_grad(net, params, b, &w);
    let without = objective_grad(net, params, b, &LossWeights::new(0.0, 0.0));
    with.iter().zip(&without).map(|(a, b)| a - b).collect()
}

pub fn consistency_error() -> f64 {
    let (net, params) = setup();
    let b = batch();
    let g = term_grad(&net, &params, &b, LossWeights::new(1.0, 0.0));
    let weak: Vec<&Image> = b.positive_weak.iter().collect();
    let strong: Vec<&Image> = b.positive_strong.iter().collect();
    // a step of FD_STEP never flips an argmax here, so the hard targets stay fixed
    worst_relative_error(&params, &g, |p| consistency_loss(&net, p, &weak, &strong, None).unwrap().0)
}

pub fn entropy_error() -> f64 {
    let (net, params) = setup();
    let b = batch();
    let g = term_grad(&net, &params, &b, LossWeights::new(0.0, 1.0));
    let weak: Vec<&Image> = b.negative_weak.iter().collect();
    let strong: Vec<&Image> = b.negative_strong.iter().collect();
    worst_relative_error(&params, &g, |p| regularization_loss(&net, p, &weak, &strong).unwrap())
}

pub fn combined_error() -> f64 {
    let (net, params) = setup();
    let b = batch();
    let w = LossWeights::new(0.7, 1.3);
    let g = objective_grad(&net, &params, &b, &w);
    worst_relative_error(&params, &g, |p| objective(&net, p, &b, &w, None).unwrap().total)
}
