mod common;

use auxmix::affinity::PoolSplit;
use auxmix::baselines::{run_baseline, BaselineSpec};
use auxmix::model::EncoderSpec;
use auxmix::pretext::pretrain;
use auxmix::trainer::{train, Init, TrainInputs, TrainOutcome};

fn arch() -> EncoderSpec {
    EncoderSpec::by_id("toy2-4").unwrap()
}

fn assert_same_training(a: &TrainOutcome, b: &TrainOutcome) {
    assert_eq!(a.checkpoint.params, b.checkpoint.params);
    assert_eq!(a.checkpoint.ema, b.checkpoint.ema);
    assert_eq!(a.evaluations, b.evaluations);
    let sup = |o: &TrainOutcome| o.log.iter().map(|r| r.supervised).collect::<Vec<_>>();
    assert_eq!(sup(a), sup(b));
}

#[test]
fn pseudo_label_with_zero_weight_is_supervised() {
    let sc = common::scenario(5);
    let view = sc.training_view();
    let h = sc.content_hash();
    let cfg = common::train_config(5);
    let sup = run_baseline(&BaselineSpec::supervised(), &view, &h, &arch(), None, &cfg).unwrap();
    let spec = BaselineSpec { loss_weight: Some(0.0), ..BaselineSpec::pseudo_label() };
    let pl = run_baseline(&spec, &view, &h, &arch(), None, &cfg).unwrap();
    assert_same_training(&sup, &pl);
    assert!(pl.log.iter().all(|r| r.consistency.is_finite()));
}

#[test]
fn fixmatch_with_unit_threshold_is_supervised() {
    let sc = common::scenario(6);
    let view = sc.training_view();
    let h = sc.content_hash();
    let cfg = common::train_config(6);
    let sup = run_baseline(&BaselineSpec::supervised(), &view, &h, &arch(), None, &cfg).unwrap();
    let spec = BaselineSpec { threshold: Some(1.0), ..BaselineSpec::fixmatch_style() };
    let fm = run_baseline(&spec, &view, &h, &arch(), None, &cfg).unwrap();
    assert_same_training(&sup, &fm);
    assert!(fm.log.iter().all(|r| r.mask_rate == Some(0.0)));
}

#[test]
fn fixmatch_is_the_trainer_with_a_full_selection_and_no_entropy_term() {
    let sc = common::scenario(7);
    let view = sc.training_view();
    let h = sc.content_hash();
    let pre = pretrain(&view, &common::pretext_config(7), &h).unwrap();
    let cfg = common::train_config(7);
    let spec = BaselineSpec { pretrained: true, threshold: Some(0.0), ..BaselineSpec::fixmatch_style() };
    let fm = run_baseline(&spec, &view, &h, &arch(), Some(&pre.checkpoint), &cfg).unwrap();

    let split = PoolSplit::all_positive(view.auxiliary.len());
    let main_cfg = auxmix::trainer::TrainConfig { lambda_minus: 0.0, threshold: Some(0.0), ..cfg };
    let inputs = TrainInputs { view: view.clone(), split: &split, scenario_hash: &h, split_meta: None, init: Init::Pretrained(&pre.checkpoint) };
    let main = train(&inputs, &main_cfg).unwrap();
    assert_same_training(&fm, &main);
    assert_eq!(fm.log, main.log);
    // with every sample passing, the consistency term is live
    assert!(fm.log.iter().any(|r| r.consistency > 0.0));
}

#[test]
fn baselines_never_touch_the_pool_split_of_the_main_method() {
    let sc = common::scenario(8);
    assert_eq!(BaselineSpec::fixmatch_style().split(sc.auxiliary.len()), PoolSplit::all_positive(sc.auxiliary.len()));
    assert_eq!(BaselineSpec::supervised().split(sc.auxiliary.len()), PoolSplit::empty());
}
