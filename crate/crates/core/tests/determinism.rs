mod common;

use auxmix::affinity::{score_checkpoint, split_pool, write_scores, ScoreMeta};
use auxmix::metrics::write_jsonl;
use auxmix::pretext::pretrain;
use auxmix::scenarios::save_scenario;
use auxmix::trainer::{train, Init, TrainInputs};

fn bytes(path: &std::path::Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

/// Every stage written to `dir`, returning the file names in order.
fn run_pipeline(dir: &std::path::Path, seed: u64) -> Vec<&'static str> {
    let sc = common::scenario(seed);
    save_scenario(&sc, &dir.join("scenario.json")).unwrap();
    let view = sc.training_view();
    let hash = sc.content_hash();
    let pre = pretrain(&view, &common::pretext_config(seed), &hash).unwrap();
    pre.checkpoint.save(&dir.join("pretext.ckpt")).unwrap();
    write_jsonl(&dir.join("pretext.jsonl"), &pre.log).unwrap();
    let (_, scores) = score_checkpoint(&pre.checkpoint, &view).unwrap();
    let out = split_pool(&scores.records, 0.0).unwrap();
    let meta = ScoreMeta {
        scenario_hash: hash.clone(),
        checkpoint_hash: pre.checkpoint.content_hash(),
        stats: out.stats,
        zero_norm_embeddings: scores.zero_norm_embeddings,
        split_hash: out.split.hash(),
        pool_size: out.split.pool_size,
    };
    write_scores(&dir.join("scores.csv"), &out.records, Some(&sc.origins()), &meta).unwrap();
    let inputs = TrainInputs { view: view.clone(), split: &out.split, scenario_hash: &hash, split_meta: Some(&meta), init: Init::Pretrained(&pre.checkpoint) };
    let trained = train(&inputs, &common::train_config(seed)).unwrap();
    trained.checkpoint.save(&dir.join("final.ckpt")).unwrap();
    write_jsonl(&dir.join("metrics.jsonl"), &trained.log).unwrap();
    vec!["scenario.json", "scenario.bin", "pretext.ckpt", "pretext.jsonl", "scores.csv", "scores.csv.meta.json", "final.ckpt", "metrics.jsonl"]
}

#[test]
fn identical_seed_and_config_give_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = run_pipeline(a.path(), 11);
    run_pipeline(b.path(), 11);
    for f in files {
        assert_eq!(bytes(&a.path().join(f)), bytes(&b.path().join(f)), "{f} differs between runs");
    }
}

#[test]
fn different_seed_changes_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path(), 11);
    run_pipeline(b.path(), 12);
    assert_ne!(bytes(&a.path().join("final.ckpt")), bytes(&b.path().join("final.ckpt")));
}
