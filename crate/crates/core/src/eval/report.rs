use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{aggregate_runs, oracle_select, Aggregate};
use crate::dataio::Task;

/// Metrics for one seed. Metric fields are `None` when gold labels are
/// unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub n_items: usize,
    pub m1_last: Option<f64>,
    pub m1_oracle: Option<f64>,
    pub oracle_iteration: Option<usize>,
    pub f1_one_to_one: Option<f64>,
    pub f1_many_to_one: Option<f64>,
    /// `(iteration, m1)` at every target refresh plus the final model.
    pub m1_trace: Vec<(usize, f64)>,
}

impl RunReport {
    /// Fills the oracle fields from `m1_trace`.
    pub fn select_oracle(&mut self) {
        if let Ok(sel) = oracle_select(&self.m1_trace) {
            self.m1_oracle = Some(sel.best_m1);
            self.oracle_iteration = Some(sel.best_id);
        }
    }
}

pub type MetricSummary = Aggregate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n_runs: usize,
    pub labelled: bool,
    pub oracle_available: bool,
    pub runs: Vec<RunReport>,
    pub aggregates: BTreeMap<String, MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

const METRICS: [(&str, &str); 4] = [
    ("m1_last", "M1 (last)"),
    ("m1_oracle", "M1 (oracle)"),
    ("f1_one_to_one", "F1 (one-to-one)"),
    ("f1_many_to_one", "F1 (many-to-one)"),
];

fn metric(run: &RunReport, key: &str) -> Option<f64> {
    match key {
        "m1_last" => run.m1_last,
        "m1_oracle" => run.m1_oracle,
        "f1_one_to_one" => run.f1_one_to_one,
        "f1_many_to_one" => run.f1_many_to_one,
        _ => None,
    }
}

impl EvalReport {
    pub fn from_runs(task: Task, runs: Vec<RunReport>) -> Self {
        let labelled = !runs.is_empty() && runs.iter().all(|r| r.m1_last.is_some());
        let mut aggregates = BTreeMap::new();
        for (key, _) in METRICS {
            let values: Option<Vec<f64>> = runs.iter().map(|r| metric(r, key)).collect();
            if let Some(Ok(agg)) = values.map(|v| aggregate_runs(&v)) {
                aggregates.insert(key.to_string(), agg);
            }
        }
        let note = (!labelled).then(|| {
            "no gold labels: metrics and oracle selection unavailable".to_string()
        });
        EvalReport {
            task,
            n_runs: runs.len(),
            labelled,
            oracle_available: labelled,
            runs,
            aggregates,
            note,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn aggregate(&self, key: &str) -> Option<&MetricSummary> {
        self.aggregates.get(key)
    }

    /// Aligned `mean ± std  max` table, values in percent.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<18} {:>16} {:>8}", "metric", "mean ± std", "max").unwrap();
        for (key, label) in METRICS {
            if let Some(a) = self.aggregates.get(key) {
                writeln!(
                    out,
                    "{:<18} {:>16} {:>8.1}",
                    label,
                    format!("{:.1} ± {:.1}", 100.0 * a.mean, 100.0 * a.std),
                    100.0 * a.max
                )
                .unwrap();
            }
        }
        if let Some(note) = &self.note {
            writeln!(out, "({note})").unwrap();
        }
        writeln!(out, "runs: {}", self.n_runs).unwrap();
        out
    }
}
