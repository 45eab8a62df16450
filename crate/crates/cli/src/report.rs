//! CSV and text outputs.

use std::fmt::Write as _;
use std::path::Path;

use mixsemi_core::metrics::ReliabilityBins;
use mixsemi_core::ssl::TrainHistory;
use mixsemi_core::{Error, Result};

/// Scientific notation with 13 significant digits.
pub fn real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.12e}")
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const HISTORY_HEADER: &str = "epoch,loss_x,loss_u,loss_total,lr,val_metric";

pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in &h.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            real(r.loss_x),
            real(r.loss_u),
            real(r.loss_total),
            real(r.lr),
            real(r.val_metric)
        );
    }
    s
}

pub fn reliability_csv(b: &ReliabilityBins) -> String {
    let mut s = String::from("bin_lo,bin_hi,count,mean_conf,accuracy\n");
    for i in 0..b.n_bins {
        let (lo, hi) = b.edges(i);
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            real(lo),
            real(hi),
            b.counts[i],
            real(b.mean_conf[i]),
            real(b.accuracy[i])
        );
    }
    let _ = writeln!(s, "ece,{}", real(b.ece));
    s
}

/// Named metric rows with one column per run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub names: Vec<String>,
    /// `runs[k][i]` is metric `i` of run `k`.
    pub runs: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn push_run(&mut self, rows: Vec<(String, f64)>) -> Result<()> {
        let names: Vec<String> = rows.iter().map(|(n, _)| n.clone()).collect();
        if self.runs.is_empty() {
            self.names = names;
        } else if names != self.names {
            return Err(Error::Validation("runs report different metrics".into()));
        }
        self.runs.push(rows.into_iter().map(|(_, v)| v).collect());
        Ok(())
    }

    /// Mean over runs of metric `i`.
    pub fn mean(&self, i: usize) -> f64 {
        self.runs.iter().map(|r| r[i]).sum::<f64>() / self.runs.len() as f64
    }

    /// Sample standard deviation of metric `i` (NaN for a single run).
    pub fn std(&self, i: usize) -> f64 {
        let k = self.runs.len();
        if k < 2 {
            return f64::NAN;
        }
        let m = self.mean(i);
        (self.runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    }

    pub fn value(&self, name: &str, run: usize) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.runs.get(run).map(|r| r[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric");
        for k in 0..self.runs.len() {
            let _ = write!(s, ",run_{k}");
        }
        s.push_str(",mean,std\n");
        for (i, name) in self.names.iter().enumerate() {
            s.push_str(name);
            for r in &self.runs {
                let _ = write!(s, ",{}", real(r[i]));
            }
            let _ = writeln!(s, ",{},{}", real(self.mean(i)), real(self.std(i)));
        }
        s
    }
}

/// Parse a `metrics.csv` back into per-metric run values.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty metrics file".into()))?;
    let cols = header.split(',').count();
    lines
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            if parts.len() != cols {
                return Err(Error::Format(format!("row {l:?} has {} of {cols} columns", parts.len())));
            }
            let vals = parts[1..]
                .iter()
                .map(|p| p.parse::<f64>().map_err(|_| Error::Format(format!("bad number {p:?}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok((parts[0].to_string(), vals))
        })
        .collect()
}
