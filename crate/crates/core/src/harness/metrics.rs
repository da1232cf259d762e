use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, Result};
use crate::gpl::train::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Train,
    Eval,
}

/// One line of a metric stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub kind: RecordKind,
    pub global_step: u64,
    /// `None` when no episode finished.
    pub mean_return: Option<f64>,
    /// `1.96` standard errors of the mean return.
    pub ci95: Option<f64>,
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team_limit: Option<usize>,
    /// Mean agent model negative log-likelihood per predicted action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floored: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_qbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_loss: Option<f64>,
}

/// Mean and `1.96 * s / sqrt(n)` with the sample standard deviation.
pub fn mean_ci(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some(1.96 * (var / n as f64).sqrt()))
}

impl MetricRecord {
    pub fn from_returns(kind: RecordKind, global_step: u64, returns: &[f64]) -> Self {
        let (mean_return, ci95) = mean_ci(returns);
        Self {
            kind,
            global_step,
            mean_return,
            ci95,
            episodes: returns.len(),
            team_limit: None,
            nll: None,
            floored: None,
            mean_qbar: None,
            value_loss: None,
        }
    }

    pub fn from_window(global_step: u64, w: &Window) -> Self {
        let per_step = |v: f64| (w.steps > 0).then(|| v / w.steps as f64);
        Self {
            nll: (w.predictions > 0).then(|| w.nll / w.predictions as f64),
            floored: Some(w.floored),
            mean_qbar: per_step(w.qbar),
            value_loss: per_step(w.value_loss),
            ..Self::from_returns(RecordKind::Train, global_step, &w.returns)
        }
    }

    /// Lower and upper end of the confidence interval.
    pub fn interval(&self) -> Option<(f64, f64)> {
        Some((self.mean_return? - self.ci95?, self.mean_return? + self.ci95?))
    }
}

/// Append-only JSONL writer.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, r: &MetricRecord) -> Result<()> {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::statistics::Statistics;

    #[test]
    fn ci_matches_sample_statistics() {
        let xs = [1.0, 2.0, 4.0, 7.0, -3.0];
        let (m, ci) = mean_ci(&xs);
        let sd = xs.iter().copied().std_dev();
        assert!((m.unwrap() - 2.2).abs() < 1e-12);
        assert!((ci.unwrap() - 1.96 * sd / 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_ci(&[]), (None, None));
        assert_eq!(mean_ci(&[3.0]), (Some(3.0), Some(0.0)));
    }

    #[test]
    fn append_only_lines_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        for step in [0, 10] {
            let mut w = MetricsWriter::open(&path).unwrap();
            w.append(&MetricRecord::from_returns(RecordKind::Train, step, &[1.0, 2.0])).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let recs: Vec<MetricRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].global_step, 10);
        let empty = MetricRecord::from_returns(RecordKind::Eval, 0, &[]);
        let line = serde_json::to_string(&empty).unwrap();
        assert!(line.contains("\"mean_return\":null"));
    }
}
