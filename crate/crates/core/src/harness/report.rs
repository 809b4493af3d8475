//! Comparison tables and score-distribution plots over completed runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunManifest, ScenarioBlock};
use crate::affinity::{read_score_origins, read_scores, ScoreHistogram, HISTOGRAM_BINS};
use crate::error::{Error, Result};
use crate::metrics::{read_jsonl, MetricsRecord};
use crate::scenarios::Origin;

/// A completed run whose artifacts matched their recorded digests.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let dir = super::run_dir_of(dir);
    let manifest = RunManifest::load(&dir)?;
    manifest.verify(&dir)?;
    Ok(LoadedRun { dir, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub label: String,
    pub n: usize,
    pub final_mean: f64,
    pub final_std: Option<f64>,
    pub best_mean: f64,
    pub best_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingRow {
    pub beta: f64,
    pub n: usize,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub precision_mean: Option<f64>,
    pub recall_mean: Option<f64>,
    pub selected_mean: f64,
    pub total_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: ScenarioBlock,
    pub run_ids: Vec<String>,
    pub rows: Vec<MethodRow>,
    pub masking: Vec<MaskingRow>,
    pub histogram: Option<ScoreHistogram>,
    pub failures: Vec<String>,
}

/// `(mean, sample standard deviation)`; the deviation needs two values.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

fn optional_mean(xs: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None);
    }
    let (m, s) = mean_std(&v);
    (Some(m), s)
}

/// Final and best EMA accuracy recomputed from a metrics log.
fn accuracies(path: &Path) -> Result<(f64, f64)> {
    let log: Vec<MetricsRecord> = read_jsonl(path)?;
    let acc: Vec<f64> = log.iter().filter_map(|r| r.test_acc).collect();
    match acc.last() {
        Some(&last) => Ok((last, acc.iter().copied().fold(f64::NEG_INFINITY, f64::max))),
        None => Err(Error::corrupt(path, "metrics log has no evaluation")),
    }
}

/// Aggregate runs over one scenario into comparison tables.
pub fn report(runs: &[LoadedRun]) -> Result<Report> {
    let first = runs.first().ok_or_else(|| Error::InvalidArgument("report needs at least one run".into()))?;
    let scenario = first.manifest.config.scenario.clone();
    for r in &runs[1..] {
        if r.manifest.config.scenario != scenario {
            return Err(Error::IncompatibleRuns(first.manifest.run_id.clone(), r.manifest.run_id.clone()));
        }
    }

    let mut per_method: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut per_beta: BTreeMap<String, (f64, Vec<Option<f64>>, Vec<Option<f64>>, Vec<Option<f64>>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut histogram: Option<ScoreHistogram> = None;
    let mut failures = Vec::new();
    for run in runs {
        for f in &run.manifest.failures {
            failures.push(format!("{} replicate {}: {} failed: {}", run.manifest.run_id, f.replicate, f.stage, f.message));
        }
        for rep in &run.manifest.replicates {
            for m in &rep.runs {
                let (fin, best) = accuracies(&run.dir.join(&m.metrics.path))?;
                let e = per_method.entry(m.label.clone()).or_default();
                e.0.push(fin);
                e.1.push(best);
            }
            for (i, mask) in rep.masking.iter().enumerate() {
                let e = per_beta.entry(format!("{:020.6}", mask.beta + 1e6)).or_insert_with(|| (mask.beta, vec![], vec![], vec![], vec![], vec![]));
                e.1.push(mask.auroc);
                e.2.push(mask.precision);
                e.3.push(mask.recall);
                e.4.push(mask.selected as f64);
                e.5.push(mask.total as f64);
                // scores do not depend on beta, so one file per replicate feeds the histogram
                if i == 0 {
                    let path = run.dir.join(&mask.scores.path);
                    let (records, _, _) = read_scores(&path)?;
                    if let Some(origins) = read_score_origins(&path)? {
                        let h = ScoreHistogram::build(&records, &origins, HISTOGRAM_BINS);
                        histogram = Some(match histogram.take() {
                            None => h,
                            Some(mut acc) => {
                                for ((_, a), (_, b)) in acc.counts.iter_mut().zip(&h.counts) {
                                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                                }
                                acc
                            }
                        });
                    }
                }
            }
        }
    }

    let mut rows: Vec<MethodRow> = per_method
        .into_iter()
        .map(|(label, (fin, best))| {
            let (final_mean, final_std) = mean_std(&fin);
            let (best_mean, best_std) = mean_std(&best);
            MethodRow { label, n: fin.len(), final_mean, final_std, best_mean, best_std }
        })
        .collect();
    rows.sort_by(|a, b| b.final_mean.total_cmp(&a.final_mean).then_with(|| a.label.cmp(&b.label)));
    let masking = per_beta
        .into_values()
        .map(|(beta, auroc, precision, recall, selected, total)| {
            let (auroc_mean, auroc_std) = optional_mean(&auroc);
            MaskingRow {
                beta,
                n: auroc.len(),
                auroc_mean,
                auroc_std,
                precision_mean: optional_mean(&precision).0,
                recall_mean: optional_mean(&recall).0,
                selected_mean: mean_std(&selected).0,
                total_mean: mean_std(&total).0,
            }
        })
        .collect();
    Ok(Report { scenario, run_ids: runs.iter().map(|r| r.manifest.run_id.clone()).collect(), rows, masking, histogram, failures })
}

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.digits$}"))
}

impl Report {
    pub fn markdown(&self) -> String {
        let s = &self.scenario;
        let mut out = String::from("# Experiment report\n\n");
        let _ = writeln!(
            out,
            "Scenario: `{}` ({}), labeled {:?} with {} per class, auxiliary {:?} ({} per class, {} noise), overlap `{}`, {} test images per class.\n",
            s.dataset,
            s.dataset_options.side,
            s.labeled_classes,
            s.labels_per_class,
            s.aux.classes,
            s.aux.per_class.map_or("all remaining".to_string(), |n| n.to_string()),
            s.aux.noise,
            s.overlap.as_str(),
            s.test_per_class
        );
        let _ = writeln!(out, "Runs: {}\n", self.run_ids.join(", "));
        out.push_str("## Test accuracy (EMA weights, %)\n\n");
        out.push_str("`final` is the last evaluation; `best` is the maximum over periodic evaluations. Std is the sample deviation over replicates.\n\n");
        out.push_str("| method | n | final mean | final std | best mean | best std |\n|---|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(out, "| {} | {} | {} | {} | {} | {} |", r.label, r.n, f2(r.final_mean), opt(r.final_std, 2), f2(r.best_mean), opt(r.best_std, 2));
        }
        if !self.masking.is_empty() {
            out.push_str("\n## Affinity masking\n\nAUROC ranks shared-class samples against private-class and noise samples.\n\n");
            out.push_str("| beta | n | AUROC mean | AUROC std | precision | recall | selected / pool |\n|---:|---:|---:|---:|---:|---:|---:|\n");
            for m in &self.masking {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {:.1} / {:.1} |",
                    m.beta,
                    m.n,
                    opt(m.auroc_mean, 4),
                    opt(m.auroc_std, 4),
                    opt(m.precision_mean, 4),
                    opt(m.recall_mean, 4),
                    m.selected_mean,
                    m.total_mean
                );
            }
        }
        if let Some(h) = &self.histogram {
            out.push_str("\n## Affinity score histogram\n\nCounts summed over replicates; see `histogram.csv` and `histogram.svg`.\n\n| bin | ");
            out.push_str(&h.counts.iter().map(|(o, _)| o.as_str()).collect::<Vec<_>>().join(" | "));
            out.push_str(" |\n|---|");
            out.push_str(&"---:|".repeat(h.counts.len()));
            out.push('\n');
            for b in 0..h.edges.len() - 1 {
                if h.counts.iter().all(|(_, c)| c[b] == 0) {
                    continue;
                }
                let _ = write!(out, "| [{:.1}, {:.1}) |", h.edges[b], h.edges[b + 1]);
                for (_, c) in &h.counts {
                    let _ = write!(out, " {} |", c[b]);
                }
                out.push('\n');
            }
        }
        if !self.failures.is_empty() {
            out.push_str("\n## Failures\n\n");
            for f in &self.failures {
                let _ = writeln!(out, "- {f}");
            }
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("method,n,final_mean,final_std,best_mean,best_std\n");
        for r in &self.rows {
            let s = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{},{},{:.4},{},{:.4},{}", r.label, r.n, r.final_mean, s(r.final_std), r.best_mean, s(r.best_std));
        }
        out
    }

    pub fn histogram_csv(&self) -> Option<String> {
        let h = self.histogram.as_ref()?;
        let mut out = String::from("origin,bin_low,bin_high,count\n");
        for (o, counts) in &h.counts {
            for (b, c) in counts.iter().enumerate() {
                let _ = writeln!(out, "{},{:.2},{:.2},{}", o.as_str(), h.edges[b], h.edges[b + 1], c);
            }
        }
        Some(out)
    }

    pub fn histogram_svg(&self) -> Option<String> {
        let h = self.histogram.as_ref()?;
        let (w, ht, pad) = (640.0, 320.0, 40.0);
        let bins = h.edges.len() - 1;
        let max = h.counts.iter().flat_map(|(_, c)| c.iter().copied()).max().unwrap_or(0).max(1) as f64;
        let slot = (w - 2.0 * pad) / bins as f64;
        let bar = slot / h.counts.len() as f64;
        let colour = |o: Origin| match o {
            Origin::Shared => "#2b8cbe",
            Origin::Private => "#e6550d",
            Origin::Noise => "#969696",
        };
        let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{ht}\" viewBox=\"0 0 {w} {ht}\">\n");
        let _ = writeln!(out, "<rect width=\"{w}\" height=\"{ht}\" fill=\"white\"/>");
        let base = ht - pad;
        let _ = writeln!(out, "<line x1=\"{pad}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>", w - pad);
        for (k, (o, counts)) in h.counts.iter().enumerate() {
            for (b, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let bh = (base - pad) * c as f64 / max;
                let x = pad + b as f64 * slot + k as f64 * bar;
                let _ = writeln!(out, "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar:.2}\" height=\"{bh:.2}\" fill=\"{}\"/>", base - bh, colour(*o));
            }
            let _ = writeln!(out, "<text x=\"{:.0}\" y=\"20\" font-size=\"12\" fill=\"{}\">{}</text>", pad + 90.0 * k as f64, colour(*o), o.as_str());
        }
        for b in (0..=bins).step_by(5) {
            let x = pad + b as f64 * slot;
            let _ = writeln!(out, "<text x=\"{x:.2}\" y=\"{:.0}\" font-size=\"10\" text-anchor=\"middle\">{:.1}</text>", base + 14.0, h.edges[b]);
        }
        let _ = writeln!(out, "<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"11\" text-anchor=\"middle\">affinity score</text>", w / 2.0, ht - 6.0);
        out.push_str("</svg>\n");
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub histogram_csv: Option<PathBuf>,
    pub histogram_svg: Option<PathBuf>,
}

pub fn write_report(report: &Report, out_dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, body: &str| -> Result<PathBuf> {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    Ok(ReportFiles {
        markdown: write("report.md", &report.markdown())?,
        csv: write("report.csv", &report.csv())?,
        histogram_csv: report.histogram_csv().map(|b| write("histogram.csv", &b)).transpose()?,
        histogram_svg: report.histogram_svg().map(|b| write("histogram.svg", &b)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_deviation() {
        let (m, s) = mean_std(&[70.0, 72.0, 74.0]);
        assert_eq!(m, 72.0);
        assert_eq!(s, Some(2.0));
        assert_eq!(mean_std(&[5.0]).1, None);
    }
}
