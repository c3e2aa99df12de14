use std::fmt::Write as _;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    Mae,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Mae => "mae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accuracy" => Some(Self::Accuracy),
            "mae" => Some(Self::Mae),
            _ => None,
        }
    }
}

/// One task's result on one split at one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub samples: usize,
    pub loss: f64,
    pub kind: MetricKind,
    pub value: f64,
    pub seconds: f64,
}

/// Append-only learning-curve record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

const HEADER: &str = "epoch,split,task,samples,loss,metric,value,seconds";

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; epochs may repeat across tasks and splits but never
    /// go backwards.
    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch < last.epoch {
                return Err(HarnessError::Run(format!("epoch {} logged after epoch {}", row.epoch, last.epoch)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.rows.last().map(|r| r.epoch)
    }

    /// Rows of one split and task in epoch order.
    pub fn curve<'a>(&'a self, split: &'a str, task: &'a str) -> impl Iterator<Item = &'a MetricsRow> + 'a {
        self.rows.iter().filter(move |r| r.split == split && r.task == task)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{},{},{},{}", r.epoch, r.split, r.task, r.samples, r.loss, r.kind.name(), r.value, r.seconds).unwrap();
        }
        s
    }

    /// Replays a CSV produced by [`MetricsLog::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(HarnessError::Run("metrics CSV has an unexpected header".into()));
        }
        let mut log = Self::new();
        for (n, line) in lines.enumerate() {
            let bad = || HarnessError::Run(format!("metrics CSV line {}: `{line}`", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            let [epoch, split, task, samples, loss, kind, value, seconds] = f[..] else { return Err(bad()) };
            log.push(MetricsRow {
                epoch: epoch.parse().map_err(|_| bad())?,
                split: split.into(),
                task: task.into(),
                samples: samples.parse().map_err(|_| bad())?,
                loss: loss.parse().map_err(|_| bad())?,
                kind: MetricKind::parse(kind).ok_or_else(bad)?,
                value: value.parse().map_err(|_| bad())?,
                seconds: seconds.parse().map_err(|_| bad())?,
            })?;
        }
        Ok(log)
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}
