//! Line-delimited JSON metrics. Every line is one record:
//! `{"run": .., "kind": "train"|"eval"|"error", "step": .., "values": {..}}`,
//! eval lines may also carry a `table`. Lines are flushed as written, so a
//! crash leaves at most one truncated final line.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalRecord, FactorizationTable};
use crate::objective::LossReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run: String,
    pub kind: String,
    pub step: u64,
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<FactorizationTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Scalars that legitimately differ between identical runs.
pub const NONDETERMINISTIC: &[&str] = &["wall_clock_s"];

pub struct MetricsSink {
    run: String,
    file: Option<File>,
    pub records: Vec<MetricRecord>,
}

impl MetricsSink {
    /// Appends to `path` when given; records are always kept in memory too.
    pub fn open(path: Option<&Path>, run: &str) -> io::Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                Some(OpenOptions::new().create(true).append(true).open(p)?)
            }
            None => None,
        };
        Ok(Self { run: run.to_string(), file, records: Vec::new() })
    }

    fn write(&mut self, rec: MetricRecord) -> io::Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(&rec).map_err(io::Error::other)?;
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn train(&mut self, env_step: u64, learner_step: u64, rep: &LossReport, recent: &[(f64, bool)]) -> io::Result<()> {
        let mut v = BTreeMap::new();
        v.insert("learner_step".into(), learner_step as f64);
        for (k, x) in [
            ("td_loss", rep.td_loss),
            ("msg_ce", rep.msg_ce),
            ("msg_kl", rep.msg_kl),
            ("msg_loss", rep.msg_loss),
            ("policy_loss", rep.policy_loss),
            ("alpha_loss", rep.alpha_loss),
            ("total", rep.total),
            ("alpha", rep.alpha),
            ("entropy", rep.entropy),
        ] {
            v.insert(k.into(), x);
        }
        for (g, n) in &rep.grad_norms {
            v.insert(format!("grad_norm.{g}"), *n);
        }
        if !recent.is_empty() {
            let n = recent.len() as f64;
            v.insert("train_return".into(), recent.iter().map(|r| r.0).sum::<f64>() / n);
            v.insert("train_success".into(), recent.iter().filter(|r| r.1).count() as f64 / n);
        }
        self.write(MetricRecord { run: self.run.clone(), kind: "train".into(), step: env_step, values: v, table: None, message: None })
    }

    pub fn eval(&mut self, rec: &EvalRecord) -> io::Result<()> {
        let mut v = BTreeMap::new();
        v.insert("mean_return".into(), rec.mean_return);
        v.insert("median_return".into(), rec.median_return);
        v.insert("success_rate".into(), rec.success_rate);
        v.insert("episodes".into(), rec.episodes as f64);
        v.insert("wall_clock_s".into(), rec.wall_clock_s);
        self.write(MetricRecord {
            run: self.run.clone(),
            kind: "eval".into(),
            step: rec.env_step,
            values: v,
            table: rec.table.clone(),
            message: None,
        })
    }

    pub fn error(&mut self, step: u64, msg: &str) -> io::Result<()> {
        self.write(MetricRecord {
            run: self.run.clone(),
            kind: "error".into(),
            step,
            values: BTreeMap::new(),
            table: None,
            message: Some(msg.to_string()),
        })
    }
}

/// Parses a metrics file, skipping lines that are not valid records.
/// Returns the records and the number of skipped lines.
pub fn read_metrics(path: &Path) -> io::Result<(Vec<MetricRecord>, usize)> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricRecord>(&line) {
            Ok(r) => out.push(r),
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// Largest absolute difference between two record streams over all shared
/// deterministic scalars; `None` when the streams differ in shape.
pub fn max_scalar_diff(a: &[MetricRecord], b: &[MetricRecord]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.kind != y.kind || x.step != y.step {
            return None;
        }
        for (k, v) in &x.values {
            if NONDETERMINISTIC.contains(&k.as_str()) {
                continue;
            }
            let w = y.values.get(k)?;
            if v.is_nan() && w.is_nan() {
                continue;
            }
            worst = worst.max((v - w).abs());
        }
        if x.values.len() != y.values.len() {
            return None;
        }
    }
    Some(worst)
}
