//! Tables and plots from finished run directories. Reads only what the
//! runs persisted, so reports can be rebuilt at any time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::mutation::OperatorSpec;

use super::{read_jsonl, Condition, ExperimentConfig, ExperimentError, GeneralityRecord, MergedRecord, TrialSummary};

const MISSING: &str = "\u{2014}";

/// Mean and sample standard deviation; the deviation is absent below two
/// values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRow {
    pub condition: Condition,
    pub model: String,
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedRow {
    pub condition: Condition,
    pub label: String,
    pub n: usize,
    pub coverage_mean: f64,
    pub coverage_std: Option<f64>,
    pub qd_mean: f64,
    pub qd_std: Option<f64>,
    /// Relative to the first solo row, in percent.
    pub coverage_delta_pct: Option<f64>,
    pub qd_delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub label: String,
    /// Mean value per round, starting at round 1.
    pub points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    /// Experiment names, in the order read.
    pub runs: Vec<String>,
    pub rows: Vec<ConditionRow>,
    pub merged: Vec<MergedRow>,
    pub generality_curves: Vec<Curve>,
    pub merged_qd_curves: Vec<Curve>,
    /// Settings in effect that are local choices rather than part of the method.
    pub flags: Vec<String>,
}

struct Run {
    config: ExperimentConfig,
    trials: Vec<(PathBuf, TrialSummary)>,
}

/// Experiment directories under `path`: itself if it holds an
/// `experiment.json`, otherwise its immediate subdirectories that do.
fn find_runs(path: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    if path.join("experiment.json").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut found = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            if p.join("experiment.json").is_file() {
                found.push(p);
            }
        }
    }
    found.sort();
    Ok(found)
}

fn load_run(dir: &Path) -> Result<Run, ExperimentError> {
    let format = |message: String| ExperimentError::Format {
        path: dir.to_path_buf(),
        message,
    };
    let config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(dir.join("experiment.json"))?)
        .map_err(|e| format(e.to_string()))?;
    let mut trials = Vec::new();
    for seed in &config.seeds {
        let tdir = dir.join(format!("trial-{seed}"));
        let summary: TrialSummary = serde_json::from_str(&fs::read_to_string(tdir.join("summary.json"))?)
            .map_err(|e| format(format!("trial-{seed}: {e}")))?;
        trials.push((tdir, summary));
    }
    Ok(Run {
        config,
        trials,
    })
}

fn mean_by_round(series: &[Vec<f64>]) -> Vec<f64> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|r| {
            let vals: Vec<f64> = series.iter().filter_map(|s| s.get(r).copied()).collect();
            mean_std(&vals).0.unwrap_or(0.0)
        })
        .collect()
}

/// Build the report for every run found under `paths`.
pub fn report(paths: &[PathBuf]) -> Result<Report, ExperimentError> {
    let mut runs = Vec::new();
    for p in paths {
        for dir in find_runs(p)? {
            runs.push(load_run(&dir)?);
        }
    }
    if runs.is_empty() {
        return Err(ExperimentError::NoRuns);
    }

    // (condition, model) -> metric -> per-trial values
    let mut per_model: BTreeMap<(Condition, String), BTreeMap<&'static str, Vec<f64>>> = BTreeMap::new();
    // (condition, label) -> per-trial merged values
    let mut merged: BTreeMap<(Condition, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut gen_series: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut qd_series: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();

    for run in &runs {
        for (tdir, t) in &run.trials {
            let mut by_model: BTreeMap<String, Vec<&super::NodeSummary>> = BTreeMap::new();
            for node in &t.nodes {
                by_model.entry(node.operator.clone()).or_default().push(node);
            }
            for (model, nodes) in by_model {
                let metrics = per_model.entry((t.condition, model)).or_default();
                let avg = |f: &dyn Fn(&super::NodeSummary) -> Option<f64>| {
                    let vals: Vec<f64> = nodes.iter().filter_map(|n| f(n)).collect();
                    mean_std(&vals).0
                };
                let values = [
                    ("peak_generality", avg(&|n| n.peak_generality)),
                    ("niche_novelty", avg(&|n| n.mean_niche_novelty)),
                    ("node_coverage", avg(&|n| Some(n.final_coverage))),
                    ("node_qd_score", avg(&|n| Some(n.final_qd_score))),
                ];
                for (metric, v) in values {
                    let entry = metrics.entry(metric).or_default();
                    if let Some(v) = v {
                        entry.push(v);
                    }
                }
            }
            let m = merged.entry((t.condition, t.label.clone())).or_default();
            m.0.push(t.merged_coverage);
            m.1.push(t.final_merged_qd_score);

            let gens: Vec<GeneralityRecord> = read_jsonl(&tdir.join("generality.jsonl"))?;
            let mut by_round: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            for g in gens {
                by_round.entry(g.round).or_default().push(g.generality);
            }
            gen_series
                .entry(t.label.clone())
                .or_default()
                .push(by_round.values().map(|v| mean_std(v).0.unwrap_or(0.0)).collect());
            let qd: Vec<MergedRecord> = read_jsonl(&tdir.join("merged.jsonl"))?;
            qd_series
                .entry(t.label.clone())
                .or_default()
                .push(qd.iter().map(|m| m.qd_score).collect());
        }
    }

    let mut rows = Vec::new();
    for ((condition, model), metrics) in per_model {
        for (metric, values) in metrics {
            let (mean, std) = if condition == Condition::Solo && metric == "niche_novelty" {
                (None, None)
            } else {
                mean_std(&values)
            };
            rows.push(ConditionRow {
                condition,
                model: model.clone(),
                metric: metric.to_string(),
                n: values.len(),
                mean,
                std,
            });
        }
    }

    let solo = merged
        .iter()
        .find(|((c, _), _)| *c == Condition::Solo)
        .map(|(_, (cov, qd))| (mean_std(cov).0.unwrap_or(0.0), mean_std(qd).0.unwrap_or(0.0)));
    let delta = |x: f64, base: f64| (base != 0.0).then(|| 100.0 * (x - base) / base);
    let merged_rows = merged
        .into_iter()
        .map(|((condition, label), (cov, qd))| {
            let (cm, cs) = mean_std(&cov);
            let (qm, qs) = mean_std(&qd);
            let (cm, qm) = (cm.unwrap_or(0.0), qm.unwrap_or(0.0));
            MergedRow {
                condition,
                label,
                n: cov.len(),
                coverage_mean: cm,
                coverage_std: cs,
                qd_mean: qm,
                qd_std: qs,
                coverage_delta_pct: solo.and_then(|(c, _)| delta(cm, c)),
                qd_delta_pct: solo.and_then(|(_, q)| delta(qm, q)),
            }
        })
        .collect();

    let mut flags = vec![
        "grid resolution and TSP bin edges are local choices".to_string(),
        "held-out corpus is a bundled set of classic warriors".to_string(),
    ];
    for run in &runs {
        let c = &run.config;
        flags.push(format!(
            "{}: rounds={} champion_window={} max_cycles={} rounds_per_pair={} merge={:?}",
            c.name,
            c.rounds,
            c.champion_window.map_or("unbounded".to_string(), |k| k.to_string()),
            c.mars.max_cycles,
            c.mars.rounds_per_pair,
            c.merge
        ));
        if let Some((_, t)) = run.trials.first() {
            let shared = t.seed_hashes.iter().filter(|h| t.heldout_hashes.contains(h)).count();
            if shared > 0 {
                flags.push(format!(
                    "{}: {shared} of {} seed warriors are also in the held-out corpus",
                    c.name,
                    t.seed_hashes.len()
                ));
            }
        }
        for n in &c.nodes {
            if let OperatorSpec::Llm { endpoint, .. } | OperatorSpec::Replay { endpoint, .. } = &n.operator {
                flags.push(format!(
                    "{}: {} uses temperature={} max_retries={}",
                    c.name,
                    n.operator.identity(),
                    endpoint.temperature,
                    endpoint.max_retries
                ));
            }
        }
    }
    flags.dedup();

    Ok(Report {
        runs: runs.iter().map(|r| r.config.name.clone()).collect(),
        rows,
        merged: merged_rows,
        generality_curves: gen_series
            .into_iter()
            .map(|(label, s)| Curve {
                label,
                points: mean_by_round(&s),
            })
            .collect(),
        merged_qd_curves: qd_series
            .into_iter()
            .map(|(label, s)| Curve {
                label,
                points: mean_by_round(&s),
            })
            .collect(),
        flags,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(MISSING.to_string(), |v| format!("{v:.3}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Report {
    /// One row per condition, model and metric.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("condition,model,metric,n,mean,std,mean_pm_std\n");
        for r in &self.rows {
            let pm = match (r.mean, r.std) {
                (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
                (Some(m), None) => format!("{m:.3}"),
                _ => MISSING.to_string(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.condition.as_str(),
                csv_field(&r.model),
                r.metric,
                r.n,
                fmt_opt(r.mean),
                fmt_opt(r.std),
                pm
            );
        }
        out
    }

    pub fn merged_csv(&self) -> String {
        let mut out =
            String::from("condition,label,n,coverage_mean,coverage_std,qd_score_mean,qd_score_std,coverage_delta_pct,qd_score_delta_pct\n");
        for r in &self.merged {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{},{:.3},{},{},{}",
                r.condition.as_str(),
                csv_field(&r.label),
                r.n,
                r.coverage_mean,
                fmt_opt(r.coverage_std),
                r.qd_mean,
                fmt_opt(r.qd_std),
                r.coverage_delta_pct.map_or(MISSING.to_string(), |d| format!("{d:+.1}")),
                r.qd_delta_pct.map_or(MISSING.to_string(), |d| format!("{d:+.1}")),
            );
        }
        out
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of per-round curves.
pub fn line_svg(title: &str, y_label: &str, curves: &[Curve]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let rounds = curves.iter().map(|c| c.points.len()).max().unwrap_or(1).max(2);
    let ymax = curves
        .iter()
        .flat_map(|c| c.points.iter().copied())
        .fold(0.0f64, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let x = |r: usize| left + pw * r as f64 / (rounds - 1) as f64;
    let y = |v: f64| top + ph * (1.0 - v / ymax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{:.1}" text-anchor="end">{:.2}</text><line x1="{left}" y1="{:.1}" x2="{}" y2="{:.1}" stroke="#ddd"/>"##,
            left - 6.0,
            y(v) + 4.0,
            v,
            y(v),
            left + pw,
            y(v)
        );
    }
    for r in 0..rounds {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x(r), top + ph + 16.0, r + 1);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">round</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.points.iter().enumerate().map(|(r, v)| format!("{:.1},{:.1}", x(r), y(*v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write `table.csv`, `merged.csv`, `report.json` and the two plots.
pub fn write_report(report: &Report, out: &Path, csv: bool, svg: bool) -> Result<(), ExperimentError> {
    fs::create_dir_all(out)?;
    let mut json = serde_json::to_string_pretty(report).map_err(std::io::Error::from)?;
    json.push('\n');
    fs::write(out.join("report.json"), json)?;
    if csv {
        fs::write(out.join("table.csv"), report.table_csv())?;
        fs::write(out.join("merged.csv"), report.merged_csv())?;
    }
    if svg {
        fs::write(
            out.join("generality.svg"),
            line_svg("Champion generality (held-out) over rounds", "generality", &report.generality_curves),
        )?;
        fs::write(
            out.join("merged_qd.svg"),
            line_svg("Merged archive QD-Score over rounds", "QD-Score", &report.merged_qd_curves),
        )?;
    }
    Ok(())
}
