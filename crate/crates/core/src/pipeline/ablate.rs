use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, MorphConfig, PipelineError, RunConfig, RunOptions};
use crate::eval::EvalReport;
use crate::feats::SpanMode;
use crate::sae::ContextMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Layers,
    NgramOrder,
    SpanMode,
    ContextMode,
}

impl FromStr for AblationAxis {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "layers" => Ok(AblationAxis::Layers),
            "ngram_order" => Ok(AblationAxis::NgramOrder),
            "span_mode" => Ok(AblationAxis::SpanMode),
            "context_mode" => Ok(AblationAxis::ContextMode),
            other => Err(PipelineError::Config(format!(
                "unknown ablation axis {other:?} (expected layers, ngram_order, span_mode or context_mode)"
            ))),
        }
    }
}

fn label<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string).or_else(|| Some(v.to_string())))
        .unwrap_or_default()
}

impl AblationAxis {
    pub fn name(self) -> String {
        label(&self)
    }

    /// One modified config per value, labelled. Empty value lists in the
    /// config fall back to the usual comparison sets.
    pub fn variants(self, cfg: &RunConfig) -> Result<Vec<(String, RunConfig)>, PipelineError> {
        let a = &cfg.ablation;
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = cfg.clone();
            f(&mut c);
            c
        };
        let out = match self {
            AblationAxis::Layers => {
                let values = if a.layers.is_empty() {
                    ["all", "0-3", "4-7", "8-11"].iter().map(|s| s.parse().unwrap()).collect()
                } else {
                    a.layers.clone()
                };
                values
                    .into_iter()
                    .map(|v| (v.to_string(), with(&|c| c.data.layers = v.clone())))
                    .collect()
            }
            AblationAxis::NgramOrder => {
                let morph: &MorphConfig = cfg.morph.as_ref().ok_or_else(|| {
                    PipelineError::Config("the ngram_order axis needs a morph section".into())
                })?;
                let values = if a.ngram_order.is_empty() { vec![1, 2, 3] } else { a.ngram_order.clone() };
                values
                    .into_iter()
                    .map(|order| {
                        let m = MorphConfig { order, ..morph.clone() };
                        (order.to_string(), with(&|c| c.morph = Some(m.clone())))
                    })
                    .collect()
            }
            AblationAxis::SpanMode => {
                let values = if a.span_mode.is_empty() {
                    vec![SpanMode::Mean, SpanMode::Max, SpanMode::EndpointsConcat]
                } else {
                    a.span_mode.clone()
                };
                values
                    .into_iter()
                    .map(|mode| (label(&mode), with(&|c| c.spans.mode = mode)))
                    .collect()
            }
            AblationAxis::ContextMode => {
                let values = if a.context_mode.is_empty() {
                    vec![ContextMode::Plain, ContextMode::Cbow]
                } else {
                    a.context_mode.clone()
                };
                values
                    .into_iter()
                    .map(|mode| (label(&mode), with(&|c| c.context.mode = mode)))
                    .collect()
            }
        };
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    /// One line per value: `mean ± std` of each metric, in percent.
    pub fn render(&self) -> String {
        let cols = [("m1_last", "M1"), ("m1_oracle", "M1 (OR)"), ("f1_one_to_one", "F1")];
        let name = self.axis.name();
        let width = self.rows.iter().map(|r| r.value.len()).chain([name.len()]).max().unwrap_or(0);
        let mut out = format!("{name:<width$}");
        for (_, head) in cols {
            write!(out, "  {head:>13}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{:<width$}", row.value).unwrap();
            for (key, _) in cols {
                let cell = row
                    .report
                    .aggregate(key)
                    .map(|a| format!("{:.1} ± {:.1}", 100.0 * a.mean, 100.0 * a.std))
                    .unwrap_or_else(|| "n/a".into());
                write!(out, "  {cell:>13}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the pipeline once per axis value; each run writes under
/// `out/<axis>/<value>/`.
pub fn run_ablation(cfg: &RunConfig, axis: AblationAxis, opts: &RunOptions) -> Result<AblationTable, PipelineError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (value, variant) in axis.variants(cfg)? {
        let dir = opts.out.join(axis.name()).join(value.replace([',', '/'], "_"));
        let report = run_pipeline(&variant, &RunOptions { out: dir, trace: opts.trace })?;
        rows.push(AblationRow { value, report });
    }
    let table = AblationTable { axis, rows };
    std::fs::create_dir_all(&opts.out).map_err(|e| PipelineError::io(&opts.out, e))?;
    let path = opts.out.join(format!("ablation-{}.json", axis.name()));
    std::fs::write(&path, table.to_json()).map_err(|e| PipelineError::io(&path, e))?;
    Ok(table)
}
