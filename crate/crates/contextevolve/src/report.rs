//! CSV, summary and SVG output derived purely from run logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use contextevolve_core::llm::AgentRole;
use contextevolve_core::text::fmt_num;

use crate::numfmt::fmt17;
use crate::runlog::{sum_usage, LogError, RunLog, Series};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub task: String,
    pub dir: PathBuf,
    pub best_so_far_csv: PathBuf,
    pub tokens_csv: PathBuf,
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// A run log with the label it is reported under.
pub struct LabeledLog {
    pub label: String,
    pub log: RunLog,
}

/// Reads logs, labelling each by its file stem (made unique).
pub fn read_logs(paths: &[PathBuf]) -> Result<Vec<LabeledLog>, LogError> {
    let mut out: Vec<LabeledLog> = Vec::new();
    for p in paths {
        let log = RunLog::read(p)?;
        let base = p.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        let mut label = base.clone();
        let mut n = 1;
        while out.iter().any(|l| l.label == label) {
            n += 1;
            label = format!("{base}#{n}");
        }
        out.push(LabeledLog { label, log });
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn series_csv<T>(labels: &[&str], columns: &[&[T]], fmt: impl Fn(&T) -> String) -> String {
    let mut out = String::from("iteration");
    for l in labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    let rows = columns.iter().map(|c| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        let _ = write!(out, "{i}");
        for c in columns {
            out.push(',');
            if let Some(v) = c.get(i) {
                out.push_str(&fmt(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Best-so-far CSV: one row per iteration (row 0 is the seed), one column per run.
pub fn best_so_far_csv(labels: &[&str], series: &[Series]) -> String {
    let cols: Vec<&[f64]> = series.iter().map(|s| s.best_so_far.as_slice()).collect();
    series_csv(labels, &cols, |x| fmt17(*x))
}

pub fn tokens_csv(labels: &[&str], series: &[Series]) -> String {
    let cols: Vec<&[u64]> = series.iter().map(|s| s.cumulative_tokens.as_slice()).collect();
    series_csv(labels, &cols, |x| x.to_string())
}

pub fn summary_text(logs: &[LabeledLog]) -> String {
    let mut out = String::new();
    for l in logs {
        let s = l.log.series();
        let stop = l.log.stop.as_ref();
        let best = l.log.records().into_iter().find(|r| Some(r.id) == s.best_id);
        let _ = writeln!(out, "[{}]", l.label);
        let _ = writeln!(out, "task: {}", l.log.header.task.name);
        let strategy = l.log.header.config.get("strategy").and_then(|v| v.as_str()).unwrap_or("?");
        let _ = writeln!(out, "strategy: {strategy}");
        let _ = writeln!(out, "iterations: {}", l.log.iterations.len());
        let _ = writeln!(out, "stop: {}", stop.map_or("incomplete", |s| s.reason.as_str()));
        if let Some(b) = best {
            let reported = b.reported_score.map(fmt_num).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "best: #{} combined {} reported {}", b.id, fmt_num(b.combined_score), reported);
        }
        let _ = writeln!(out, "improvement updates: {}", s.improvement_updates);
        let total = s.ledger.total();
        let unlogged = stop.map_or(0, |s| sum_usage(&s.unlogged_usage).total_tokens());
        let _ = writeln!(
            out,
            "tokens: {} (prompt {}, completion {}, calls {}, unfinished iteration {})",
            s.cumulative_tokens.last().copied().unwrap_or(0),
            total.prompt_tokens,
            total.completion_tokens,
            total.calls,
            unlogged
        );
        for role in AgentRole::ALL {
            let u = s.ledger.role(role);
            if u.calls > 0 {
                let _ = writeln!(out, "  {}: {} tokens in {} calls", role.as_str(), u.total_tokens(), u.calls);
            }
        }
        out.push('\n');
    }
    out
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Standalone SVG line chart, one polyline per series.
pub fn line_chart(title: &str, y_label: &str, labels: &[&str], series: &[Vec<f64>]) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 70.0, 180.0, 40.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let n = series.iter().map(Vec::len).max().unwrap_or(1).max(2);
    let all = series.iter().flatten().copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let x = |i: usize| ml + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| mt + ph * (1.0 - (v - lo) / (hi - lo));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#, ml + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{ml} {mt} V{} H{}" fill="none" stroke="black"/>"#,
        mt + ph,
        ml + pw
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(svg, r##"<line x1="{ml}" x2="{}" y1="{yy:.2}" y2="{yy:.2}" stroke="#ddd"/>"##, ml + pw);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, ml - 6.0, yy + 4.0, fmt_num(v));
    }
    let ticks = (n - 1).min(10);
    for k in 0..=ticks {
        let i = (n - 1) * k / ticks.max(1);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{i}</text>"#, x(i), mt + ph + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, ml + pw / 2.0, h - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (k, (label, values)) in labels.iter().zip(series).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> =
            values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, points.join(" "));
        let ly = mt + 16.0 * k as f64 + 8.0;
        let lx = ml + pw + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write_bundle(task: &str, dir: &Path, logs: &[LabeledLog]) -> std::io::Result<ReportBundle> {
    std::fs::create_dir_all(dir)?;
    let labels: Vec<&str> = logs.iter().map(|l| l.label.as_str()).collect();
    let series: Vec<Series> = logs.iter().map(|l| l.log.series()).collect();
    let bundle = ReportBundle {
        task: task.into(),
        dir: dir.into(),
        best_so_far_csv: dir.join("best_so_far.csv"),
        tokens_csv: dir.join("tokens.csv"),
        summary: dir.join("summary.txt"),
        plots: vec![dir.join("best_so_far.svg"), dir.join("tokens.svg")],
    };
    std::fs::write(&bundle.best_so_far_csv, best_so_far_csv(&labels, &series))?;
    std::fs::write(&bundle.tokens_csv, tokens_csv(&labels, &series))?;
    std::fs::write(&bundle.summary, summary_text(logs))?;
    let best: Vec<Vec<f64>> = series.iter().map(|s| s.best_so_far.clone()).collect();
    let tokens: Vec<Vec<f64>> =
        series.iter().map(|s| s.cumulative_tokens.iter().map(|t| *t as f64).collect()).collect();
    std::fs::write(&bundle.plots[0], line_chart(&format!("{task}: best so far"), "combined score", &labels, &best))?;
    std::fs::write(&bundle.plots[1], line_chart(&format!("{task}: cumulative tokens"), "tokens", &labels, &tokens))?;
    Ok(bundle)
}

/// Writes report files for `logs` under `out`. Logs of different tasks are
/// never plotted together: each task gets its own subdirectory.
pub fn emit_report(logs: Vec<LabeledLog>, out: &Path) -> std::io::Result<Vec<ReportBundle>> {
    let mut by_task: BTreeMap<String, Vec<LabeledLog>> = BTreeMap::new();
    for l in logs {
        by_task.entry(l.log.header.task.name.clone()).or_default().push(l);
    }
    if by_task.len() > 1 {
        log::warn!(
            "logs cover {} different tasks ({}); writing one report per task instead of a combined one",
            by_task.len(),
            by_task.keys().cloned().collect::<Vec<_>>().join(", ")
        );
        by_task.iter().map(|(task, logs)| write_bundle(task, &out.join(task), logs)).collect()
    } else {
        by_task.iter().map(|(task, logs)| write_bundle(task, out, logs)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use contextevolve_core::llm::UsageLedger;

    fn series(best: &[f64], tokens: &[u64]) -> Series {
        Series {
            best_so_far: best.to_vec(),
            cumulative_tokens: tokens.to_vec(),
            improvement_updates: 0,
            ledger: UsageLedger::default(),
            best_id: None,
        }
    }

    #[test]
    fn csv_layout() {
        let s = [series(&[0.1, 0.25], &[3, 9]), series(&[0.1], &[4])];
        let text = best_so_far_csv(&["a", "b,c"], &s);
        assert_eq!(
            text,
            "iteration,a,\"b,c\"\n0,1.0000000000000001e-1,1.0000000000000001e-1\n1,2.5000000000000000e-1,\n"
        );
        assert_eq!(tokens_csv(&["a", "b"], &s), "iteration,a,b\n0,3,4\n1,9,\n");
    }

    #[test]
    fn chart_is_standalone_svg() {
        let svg = line_chart("t <x>", "y", &["one"], &[vec![1.0, 2.0, 2.0]]);
        assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
        assert!(svg.contains("t &lt;x&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    proptest::proptest! {
        #[test]
        fn csv_values_round_trip(
            best in proptest::collection::vec(-1e6..1e6f64, 1..20),
            tokens in proptest::collection::vec(0u64..u64::MAX / 2, 1..20),
        ) {
            let s = [series(&best, &tokens)];
            let text = best_so_far_csv(&["run"], &s);
            for (line, x) in text.lines().skip(1).zip(&best) {
                let cell = line.split(',').nth(1).unwrap();
                proptest::prop_assert_eq!(cell.parse::<f64>().unwrap().to_bits(), x.to_bits());
                // the same text a run log carries for this value
                let logged: f64 = serde_json::from_str(&crate::numfmt::to_json_line(x).unwrap()).unwrap();
                proptest::prop_assert_eq!(cell.parse::<f64>().unwrap(), logged);
            }
            let text = tokens_csv(&["run"], &s);
            for (line, t) in text.lines().skip(1).zip(&tokens) {
                proptest::prop_assert_eq!(line.split(',').nth(1).unwrap().parse::<u64>().unwrap(), *t);
            }
        }
    }
}
