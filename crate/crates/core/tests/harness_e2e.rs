use std::path::Path;

use auxmix::harness::{load_run, report, run_experiment_with, write_report, Clock, ExperimentConfig, MANIFEST_FILE};
use auxmix::Error;

struct FixedClock;

impl Clock for FixedClock {
    fn now(&self) -> String {
        "2000-01-01T00:00:00Z".into()
    }
}

fn config(id: &str, replicates: usize, labels_per_class: usize) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
id = "{id}"
base_seed = 1
replicates = {replicates}

[scenario]
dataset = "toy-shapes"
labeled_classes = ["A", "F", "T"]
labels_per_class = {labels_per_class}
overlap = "partial"
test_per_class = 6
dataset_options = {{ side = 8 }}
aux = {{ classes = ["A", "R"], per_class = 5, noise = 3 }}

[pretext]
arch = "toy2-4"
iterations = 4
batch = 4
lr = 0.05

[train]
iterations = 4
labeled_batch = 4
aux_batch_ratio = 2
eval_interval = 2

[[methods]]
kind = "supervised"

[[methods]]
kind = "fixmatch_style"

[[methods]]
kind = "no_entropy"

[[methods]]
kind = "no_masking"

[sweep]
beta = [-0.5, 0.5]
"#
    ))
    .unwrap()
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Final and best accuracy read straight from the JSON lines, without the library's types.
fn raw_accuracies(path: &Path) -> (f64, f64) {
    let accs: Vec<f64> = std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap().get("test_acc").and_then(|v| v.as_f64()))
        .collect();
    (*accs.last().unwrap(), accs.iter().cloned().fold(f64::MIN, f64::max))
}

#[test]
fn runs_and_reports_are_reproducible_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config("demo", 2, 4);
    let ma = run_experiment_with(&cfg, a.path(), &FixedClock).unwrap();
    run_experiment_with(&cfg, b.path(), &FixedClock).unwrap();
    assert!(ma.succeeded(), "{:?}", ma.failures);
    assert_eq!(files(a.path()), files(b.path()));

    let run = load_run(&a.path().join("demo")).unwrap();
    let rep = report(std::slice::from_ref(&run)).unwrap();
    let (ra, rb) = (a.path().join("report1"), a.path().join("report2"));
    write_report(&rep, &ra).unwrap();
    let again = report(&[load_run(&a.path().join("demo").join(MANIFEST_FILE)).unwrap()]).unwrap();
    write_report(&again, &rb).unwrap();
    assert_eq!(files(&ra), files(&rb));
    for f in ["report.md", "report.csv", "histogram.csv", "histogram.svg"] {
        assert!(ra.join(f).exists(), "{f} missing");
    }
}

#[test]
fn sweep_fans_out_and_statistics_match_the_raw_logs() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment_with(&config("stats", 3, 4), dir.path(), &FixedClock).unwrap();
    assert_eq!(m.replicates.len(), 3);
    let labels: Vec<&str> = m.replicates[0].runs.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels.len(), 6, "{labels:?}");
    // two sweep values plus the no-entropy variant at the default beta
    assert_eq!(m.replicates[0].masking.len(), 3);

    let run_dir = dir.path().join("stats");
    let rep = report(&[load_run(&run_dir).unwrap()]).unwrap();
    assert_eq!(rep.rows.len(), 6);
    for w in rep.rows.windows(2) {
        assert!(w[0].final_mean >= w[1].final_mean);
    }
    for row in &rep.rows {
        let vals: Vec<(f64, f64)> = m
            .replicates
            .iter()
            .map(|r| r.runs.iter().find(|x| x.label == row.label).unwrap())
            .map(|x| raw_accuracies(&run_dir.join(&x.metrics.path)))
            .collect();
        let fin: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let mean = fin.iter().sum::<f64>() / 3.0;
        let var = fin.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 2.0;
        assert!((row.final_mean - mean).abs() < 1e-9);
        assert!((row.final_std.unwrap() - var.sqrt()).abs() < 1e-9);
        let best_mean = vals.iter().map(|v| v.1).sum::<f64>() / 3.0;
        assert!((row.best_mean - best_mean).abs() < 1e-9);
        assert!(row.best_mean >= row.final_mean);
    }
    let md = rep.markdown();
    assert!(md.contains("AUROC"));
    assert!(md.contains("final mean") && md.contains("best mean"));
}

#[test]
fn single_supervised_run_gives_a_one_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("one", 1, 4);
    cfg.methods.truncate(1);
    cfg.sweep = Default::default();
    let m = run_experiment_with(&cfg, dir.path(), &FixedClock).unwrap();
    assert!(m.replicates[0].pretext.is_none());
    let rep = report(&[load_run(&dir.path().join("one")).unwrap()]).unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert_eq!(rep.rows[0].label, "supervised");
    assert_eq!(rep.rows[0].final_std, None);
    assert!(rep.masking.is_empty());
}

#[test]
fn mixed_scenarios_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = config("a", 1, 4);
    a.methods.truncate(1);
    a.sweep = Default::default();
    let mut b = config("b", 1, 3);
    b.methods.truncate(1);
    b.sweep = Default::default();
    run_experiment_with(&a, dir.path(), &FixedClock).unwrap();
    run_experiment_with(&b, dir.path(), &FixedClock).unwrap();
    let runs = [load_run(&dir.path().join("a")).unwrap(), load_run(&dir.path().join("b")).unwrap()];
    assert!(matches!(report(&runs), Err(Error::IncompatibleRuns(..))));
}

#[test]
fn tampered_artifacts_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("t", 1, 4);
    cfg.methods.truncate(1);
    cfg.sweep = Default::default();
    let m = run_experiment_with(&cfg, dir.path(), &FixedClock).unwrap();
    let metrics = dir.path().join("t").join(&m.replicates[0].runs[0].metrics.path);
    let text = std::fs::read_to_string(&metrics).unwrap();
    std::fs::write(&metrics, text.replacen("\"lr\"", "\"lr\" ", 1)).unwrap();
    assert!(matches!(load_run(&dir.path().join("t")), Err(Error::HashMismatch { .. })));
}

#[test]
fn stage_failures_are_recorded_with_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("fail", 1, 4);
    cfg.pretext.arch = "toy2-0".into();
    let m = run_experiment_with(&cfg, dir.path(), &FixedClock).unwrap();
    assert!(!m.succeeded());
    assert_eq!(m.failures[0].stage, "pretext");
    assert!(dir.path().join("fail").join(MANIFEST_FILE).exists());
}
