//! Clustering evaluation: contingency tables, many-to-one accuracy,
//! one-to-one (Hungarian) matching, mapped F1, oracle selection and
//! multi-run aggregation.

mod hungarian;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{EvalReport, MetricSummary, RunReport};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// `counts[c][g]` = items predicted in cluster `c` with gold label `g`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    counts: Vec<Vec<u64>>,
    n_labels: usize,
}

impl Contingency {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n_labels = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != n_labels) {
            return Err(EvalError::Argument("ragged contingency table".into()));
        }
        Ok(Contingency { counts, n_labels })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn cluster_sizes(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn label_frequencies(&self) -> Vec<u64> {
        (0..self.n_labels)
            .map(|g| self.counts.iter().map(|r| r[g]).sum())
            .collect()
    }

    /// Majority label of each cluster (lowest label id on ties).
    pub fn majority_labels(&self) -> Vec<usize> {
        self.counts
            .iter()
            .map(|row| {
                let mut best = 0;
                for (g, &c) in row.iter().enumerate() {
                    if c > row[best] {
                        best = g;
                    }
                }
                best
            })
            .collect()
    }
}

/// Builds a table sized `max(pred)+1 × max(gold)+1`, or `m × g` if larger.
pub fn contingency(pred: &[usize], gold: &[usize], m: usize, g: usize) -> Result<Contingency> {
    if pred.len() != gold.len() {
        return Err(EvalError::Argument(format!(
            "{} predictions but {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let rows = pred.iter().map(|&p| p + 1).max().unwrap_or(0).max(m);
    let cols = gold.iter().map(|&l| l + 1).max().unwrap_or(0).max(g);
    let mut counts = vec![vec![0u64; cols]; rows];
    for (&p, &l) in pred.iter().zip(gold) {
        counts[p][l] += 1;
    }
    Ok(Contingency {
        counts,
        n_labels: cols,
    })
}

/// Many-to-one accuracy: each cluster votes for its majority label.
pub fn m1_accuracy(t: &Contingency) -> Result<f64> {
    let total = t.total();
    if total == 0 {
        return Err(EvalError::Argument("empty contingency table".into()));
    }
    let hits: u64 = t
        .counts
        .iter()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / total as f64)
}

/// Convenience: M1 straight from label vectors.
pub fn m1_from_labels(pred: &[usize], gold: &[usize]) -> Result<f64> {
    m1_accuracy(&contingency(pred, gold, 0, 0)?)
}

/// Injective cluster→label mapping maximising matched items. Clusters left
/// without a label (when there are more clusters than labels) map to `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub mapping: Vec<Option<usize>>,
    pub matched: u64,
}

pub fn hungarian_match(t: &Contingency) -> Matching {
    let (mapping, matched) = hungarian::lexicographic_matching(&t.counts, t.n_labels);
    Matching { mapping, matched }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    ManyToOne,
    OneToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Relabels clusters via the chosen mapping and scores against gold. The
/// predicted and gold item sets coincide, so precision equals recall.
pub fn mapped_f1(pred: &[usize], gold: &[usize], mode: MappingMode) -> Result<F1Score> {
    if pred.is_empty() {
        return Err(EvalError::Argument("no items to score".into()));
    }
    let t = contingency(pred, gold, 0, 0)?;
    let mapping: Vec<Option<usize>> = match mode {
        MappingMode::ManyToOne => t.majority_labels().into_iter().map(Some).collect(),
        MappingMode::OneToOne => hungarian_match(&t).mapping,
    };
    let correct = pred
        .iter()
        .zip(gold)
        .filter(|(&p, &g)| mapping[p] == Some(g))
        .count();
    let precision = correct as f64 / pred.len() as f64;
    let recall = precision;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_id: usize,
    pub best_m1: f64,
    pub last_id: usize,
    pub last_m1: f64,
}

/// Best checkpoint by M1 (earliest on ties) alongside the final one.
pub fn oracle_select(trace: &[(usize, f64)]) -> Result<Selection> {
    let &(last_id, last_m1) = trace
        .last()
        .ok_or_else(|| EvalError::Argument("empty trace".into()))?;
    let mut best = trace[0];
    for &entry in &trace[1..] {
        if entry.1 > best.1 {
            best = entry;
        }
    }
    Ok(Selection {
        best_id: best.0,
        best_m1: best.1,
        last_id,
        last_m1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

/// Mean, sample standard deviation (`n−1`; zero for one run) and maximum.
pub fn aggregate_runs(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(EvalError::Argument("no runs to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Aggregate { mean, std, max })
}
