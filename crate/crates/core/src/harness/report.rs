//! Learning-curve plots (SVG) and a CSV summary from metrics files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{read_metrics, MetricRecord};
use super::HarnessError;

/// Per-index median and min–max band across runs. Curves are aligned by
/// evaluation index and cut to the shortest one; the step is the smallest
/// step seen at that index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Band {
    pub steps: Vec<u64>,
    pub median: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn aggregate(curves: &[Vec<(u64, f64)>]) -> Band {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let mut band = Band::default();
    for k in 0..len {
        let ys: Vec<f64> = curves.iter().map(|c| c[k].1).collect();
        band.steps.push(curves.iter().map(|c| c[k].0).min().unwrap_or(0));
        band.median.push(super::median(&ys));
        band.min.push(ys.iter().copied().fold(f64::INFINITY, f64::min));
        band.max.push(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    band
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run: String,
    pub tag: String,
    pub evals: usize,
    pub final_step: u64,
    pub final_success_rate: f64,
    pub final_median_return: f64,
    pub final_mean_return: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    /// `(tag, metric)` → band.
    pub bands: BTreeMap<(String, String), Band>,
    pub skipped_lines: usize,
    pub files: Vec<PathBuf>,
}

/// Runs sharing everything but the seed share a tag: a trailing `-seed<k>`
/// is dropped from the run id.
pub fn tag_of(run: &str) -> String {
    match run.rfind("-seed") {
        Some(i) if run[i + 5..].chars().all(|c| c.is_ascii_digit()) && i + 5 < run.len() => run[..i].to_string(),
        _ => run.to_string(),
    }
}

fn curve(records: &[&MetricRecord], metric: &str) -> Vec<(u64, f64)> {
    records.iter().filter_map(|r| r.values.get(metric).map(|v| (r.step, *v))).collect()
}

const METRICS: [&str; 2] = ["success_rate", "median_return"];

/// Reads every metrics input (a file, or a directory holding
/// `metrics.jsonl`), writes one SVG per run and metric, one banded SVG per
/// tag and metric, and `summary.csv` into `out`.
pub fn emit_report(inputs: &[PathBuf], out: &Path) -> Result<Report, HarnessError> {
    fs::create_dir_all(out)?;
    let mut report = Report::default();
    let mut by_run: BTreeMap<String, Vec<MetricRecord>> = BTreeMap::new();
    for input in inputs {
        let path = if input.is_dir() { input.join("metrics.jsonl") } else { input.clone() };
        let (records, skipped) = read_metrics(&path)?;
        report.skipped_lines += skipped;
        for r in records {
            by_run.entry(r.run.clone()).or_default().push(r);
        }
    }
    let mut by_tag: BTreeMap<String, Vec<Vec<&MetricRecord>>> = BTreeMap::new();
    for (run, records) in &by_run {
        let evals: Vec<&MetricRecord> = records.iter().filter(|r| r.kind == "eval").collect();
        let Some(last) = evals.last() else { continue };
        let tag = tag_of(run);
        let get = |k: &str| last.values.get(k).copied().unwrap_or(f64::NAN);
        report.runs.push(RunSummary {
            run: run.clone(),
            tag: tag.clone(),
            evals: evals.len(),
            final_step: last.step,
            final_success_rate: get("success_rate"),
            final_median_return: get("median_return"),
            final_mean_return: get("mean_return"),
        });
        for m in METRICS {
            let c = curve(&evals, m);
            let file = out.join(format!("{}.{m}.svg", sanitize(run)));
            fs::write(&file, svg_plot(&format!("{run}: {m}"), m, &aggregate(&[c])))?;
            report.files.push(file);
        }
        by_tag.entry(tag).or_default().push(evals);
    }
    for (tag, runs) in &by_tag {
        for m in METRICS {
            let curves: Vec<Vec<(u64, f64)>> = runs.iter().map(|r| curve(r, m)).collect();
            let band = aggregate(&curves);
            let file = out.join(format!("{}.{m}.band.svg", sanitize(tag)));
            fs::write(&file, svg_plot(&format!("{tag}: {m} (median, min-max over {} runs)", runs.len()), m, &band))?;
            report.files.push(file);
            report.bands.insert((tag.clone(), m.to_string()), band);
        }
    }
    let mut csv = String::from("run,tag,evals,final_step,final_success_rate,final_median_return,final_mean_return\n");
    for r in &report.runs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.run, r.tag, r.evals, r.final_step, r.final_success_rate, r.final_median_return, r.final_mean_return
        );
    }
    let file = out.join("summary.csv");
    fs::write(&file, csv)?;
    report.files.push(file);
    if report.skipped_lines > 0 {
        eprintln!("warning: skipped {} malformed metrics line(s)", report.skipped_lines);
    }
    Ok(report)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// A single-panel line plot with a shaded band.
pub fn svg_plot(title: &str, ylabel: &str, band: &Band) -> String {
    let (w, h, m) = (640.0, 360.0, 50.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    if band.steps.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let x0 = *band.steps.first().unwrap() as f64;
    let x1 = (*band.steps.last().unwrap() as f64).max(x0 + 1.0);
    let mut y0 = band.min.iter().copied().fold(f64::INFINITY, f64::min);
    let mut y1 = band.max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{m}" y="{}" >{x0}</text><text x="{}" y="{}" text-anchor="end">{x1}</text>"#, h - m + 15.0, w - m, h - m + 15.0);
    let _ = writeln!(s, r#"<text x="5" y="{}">{y0:.2}</text><text x="5" y="{}">{y1:.2}</text>"#, h - m, m + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">env step</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#, h / 2.0, h / 2.0, escape(ylabel));
    let mut poly = String::new();
    for (x, y) in band.steps.iter().zip(&band.max) {
        let _ = write!(poly, "{:.1},{:.1} ", px(*x as f64), py(*y));
    }
    for (x, y) in band.steps.iter().zip(&band.min).rev() {
        let _ = write!(poly, "{:.1},{:.1} ", px(*x as f64), py(*y));
    }
    let _ = writeln!(s, r#"<polygon points="{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#, poly.trim_end());
    let line: Vec<String> = band.steps.iter().zip(&band.median).map(|(x, y)| format!("{:.1},{:.1}", px(*x as f64), py(*y))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, line.join(" "));
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
