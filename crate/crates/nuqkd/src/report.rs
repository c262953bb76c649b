//! Per-iteration records, summary statistics and the CSV export formats.
//!
//! Undefined metrics (empty sifted key, disabled module) are nulls and appear
//! as empty CSV fields, never zeros, to keep statistics unbiased.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::attack::{ConfusionCounts, RocCurve};
use crate::error::{Error, Result};

/// Outputs of one key-distribution iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub truly_attacked: bool,
    /// None when no decision was possible (empty sifted key).
    pub decided_attacked: Option<bool>,
    pub sifted_len: u64,
    pub shared_len: u64,
    pub qber_est: Option<f64>,
    pub qber_remaining: Option<f64>,
    pub t_source_s: Option<f64>,
    pub t_dead_s: Option<f64>,
    pub t_quantum_s: Option<f64>,
    pub sifted_rate_bps: Option<f64>,
}

const ITERATION_COLUMNS: &str = "iteration,attacked,decided_attacked,sifted_len,shared_len,\
qber_est,qber_remaining,t_source_s,t_dead_s,t_quantum_s,sifted_rate_bps";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// One row per iteration, nulls as empty fields, newline-terminated rows.
pub fn write_iterations_csv(records: &[IterationRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{ITERATION_COLUMNS}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.truly_attacked,
            opt(&r.decided_attacked),
            r.sifted_len,
            r.shared_len,
            opt(&r.qber_est),
            opt(&r.qber_remaining),
            opt(&r.t_source_s),
            opt(&r.t_dead_s),
            opt(&r.t_quantum_s),
            opt(&r.sifted_rate_bps),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_iterations_csv`]; used by the `roc` post-processor.
pub fn parse_iterations_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::CsvParse {
        line: 1,
        message: "empty file".into(),
    })?;
    if header?.trim() != ITERATION_COLUMNS {
        return Err(Error::CsvParse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_row(&line, idx + 1)?);
    }
    Ok(records)
}

fn parse_row(line: &str, lineno: usize) -> Result<IterationRecord> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 11 {
        return Err(Error::CsvParse {
            line: lineno,
            message: format!("expected 11 fields, got {}", fields.len()),
        });
    }
    fn req<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
        s.parse().map_err(|_| Error::CsvParse {
            line,
            message: format!("cannot parse {s:?}"),
        })
    }
    fn option<T: std::str::FromStr>(s: &str, line: usize) -> Result<Option<T>> {
        if s.is_empty() {
            Ok(None)
        } else {
            req(s, line).map(Some)
        }
    }
    Ok(IterationRecord {
        iteration: req(fields[0], lineno)?,
        truly_attacked: req(fields[1], lineno)?,
        decided_attacked: option(fields[2], lineno)?,
        sifted_len: req(fields[3], lineno)?,
        shared_len: req(fields[4], lineno)?,
        qber_est: option(fields[5], lineno)?,
        qber_remaining: option(fields[6], lineno)?,
        t_source_s: option(fields[7], lineno)?,
        t_dead_s: option(fields[8], lineno)?,
        t_quantum_s: option(fields[9], lineno)?,
        sifted_rate_bps: option(fields[10], lineno)?,
    })
}

/// Mean and sample standard deviation over the non-null values of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: u64,
    pub nulls: u64,
}

impl MetricSummary {
    pub fn from_values(values: impl Iterator<Item = Option<f64>>) -> Self {
        let mut kept = Vec::new();
        let mut nulls = 0u64;
        for v in values {
            match v {
                Some(x) => kept.push(x),
                None => nulls += 1,
            }
        }
        let count = kept.len() as u64;
        if kept.is_empty() {
            return Self {
                mean: None,
                std: None,
                count,
                nulls,
            };
        }
        let mean = kept.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            let var = kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        Self {
            mean: Some(mean),
            std,
            count,
            nulls,
        }
    }
}

/// Per-metric statistics plus the confusion tally of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub qber_est: MetricSummary,
    pub qber_remaining: MetricSummary,
    pub sifted_len: MetricSummary,
    pub shared_len: MetricSummary,
    pub t_source_s: MetricSummary,
    pub t_dead_s: MetricSummary,
    pub t_quantum_s: MetricSummary,
    pub sifted_rate_bps: MetricSummary,
    pub confusion: ConfusionCounts,
}

impl RunSummary {
    pub fn metrics(&self) -> [(&'static str, &MetricSummary); 8] {
        [
            ("qber_est", &self.qber_est),
            ("qber_remaining", &self.qber_remaining),
            ("sifted_len", &self.sifted_len),
            ("shared_len", &self.shared_len),
            ("t_source_s", &self.t_source_s),
            ("t_dead_s", &self.t_dead_s),
            ("t_quantum_s", &self.t_quantum_s),
            ("sifted_rate_bps", &self.sifted_rate_bps),
        ]
    }
}

/// Arithmetic mean and sample (n-1) standard deviation per metric over the
/// non-null entries, plus the decision confusion counts.
pub fn summarize(records: &[IterationRecord]) -> RunSummary {
    let confusion = crate::attack::confusion_counts(
        &records
            .iter()
            .map(|r| crate::attack::DecisionRecord {
                iteration: r.iteration,
                qber_est: r.qber_est,
                decided_attacked: r.decided_attacked.unwrap_or(false),
                truly_attacked: r.truly_attacked,
            })
            .collect::<Vec<_>>(),
    );
    let metric = |f: &dyn Fn(&IterationRecord) -> Option<f64>| {
        MetricSummary::from_values(records.iter().map(f))
    };
    RunSummary {
        qber_est: metric(&|r| r.qber_est),
        qber_remaining: metric(&|r| r.qber_remaining),
        sifted_len: metric(&|r| Some(r.sifted_len as f64)),
        shared_len: metric(&|r| Some(r.shared_len as f64)),
        t_source_s: metric(&|r| r.t_source_s),
        t_dead_s: metric(&|r| r.t_dead_s),
        t_quantum_s: metric(&|r| r.t_quantum_s),
        sifted_rate_bps: metric(&|r| r.sifted_rate_bps),
        confusion,
    }
}

/// `summary.csv`: one row per metric, then the confusion counts.
pub fn write_summary_csv(summary: &RunSummary, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "metric,mean,std,count,nulls")?;
    for (name, m) in summary.metrics() {
        writeln!(
            w,
            "{},{},{},{},{}",
            name,
            opt(&m.mean),
            opt(&m.std),
            m.count,
            m.nulls
        )?;
    }
    let c = &summary.confusion;
    for (name, v) in [
        ("true_positives", c.tp),
        ("false_positives", c.fp),
        ("true_negatives", c.tn),
        ("false_negatives", c.fn_),
    ] {
        writeln!(w, "{name},{v},,,")?;
    }
    w.flush()?;
    Ok(())
}

/// `roc.csv`: threshold, fpr, tpr; undefined rates as empty fields.
pub fn write_roc_csv(curve: &RocCurve, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(w, "{},{},{}", p.threshold, opt(&p.fpr), opt(&p.tpr))?;
    }
    w.flush()?;
    Ok(())
}

/// `schedule.csv`: the attack ground truth.
pub fn write_schedule_csv(schedule: &crate::attack::AttackSchedule, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,attacked")?;
    for i in 0..schedule.total_iterations {
        writeln!(w, "{},{}", i, schedule.is_attacked(i))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn record(i: u64) -> IterationRecord {
        IterationRecord {
            iteration: i,
            truly_attacked: i % 2 == 0,
            decided_attacked: Some(i % 2 == 0),
            sifted_len: 5000 + i,
            shared_len: 2500,
            qber_est: Some(0.25 + i as f64 * 1e-4),
            qber_remaining: if i % 3 == 0 { None } else { Some(0.24) },
            t_source_s: Some(0.32),
            t_dead_s: None,
            t_quantum_s: Some(0.32),
            sifted_rate_bps: Some(15_000.0),
        }
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("iterations.csv");
        let records: Vec<_> = (0..100).map(record).collect();
        write_iterations_csv(&records, &path).unwrap();
        let back = parse_iterations_csv(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn empty_run_is_header_only() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("iterations.csv");
        write_iterations_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(parse_iterations_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn nulls_are_empty_fields() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("iterations.csv");
        let mut r = record(0);
        r.qber_remaining = None;
        write_iterations_csv(&[r], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let row = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[6], "");
    }

    #[test]
    fn summary_hand_arithmetic() {
        let vals = [1.0, 2.0, 3.0];
        let m = MetricSummary::from_values(vals.iter().map(|&v| Some(v)));
        assert_eq!(m.mean, Some(2.0));
        assert_eq!(m.std, Some(1.0));
        assert_eq!((m.count, m.nulls), (3, 0));
    }

    #[test]
    fn summary_identical_records_zero_std() {
        let records: Vec<_> = (0..5)
            .map(|i| IterationRecord {
                iteration: i,
                ..record(0)
            })
            .collect();
        let s = summarize(&records);
        assert_eq!(s.qber_est.std, Some(0.0));
    }

    #[test]
    fn summary_all_null_metric() {
        let mut r = record(0);
        r.t_source_s = None;
        r.t_quantum_s = None;
        r.sifted_rate_bps = None;
        let s = summarize(&[r]);
        assert_eq!(s.t_source_s.mean, None);
        assert_eq!(s.t_source_s.nulls, 1);
    }

    #[test]
    fn summary_matches_streaming_computation() {
        // Independent streaming mean/std (Welford) to 1e-9 relative error.
        let records: Vec<_> = (0..1000).map(record).collect();
        let s = summarize(&records);
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut n = 0.0;
        for r in &records {
            let x = r.qber_est.unwrap();
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        let std = (m2 / (n - 1.0)).sqrt();
        assert!((s.qber_est.mean.unwrap() - mean).abs() / mean < 1e-9);
        assert!((s.qber_est.std.unwrap() - std).abs() / std < 1e-9);
    }
}
