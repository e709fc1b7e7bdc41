use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Part-of-speech induction: one item per word token.
    Posi,
    /// Constituency labelling: one item per gold span.
    Colab,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosiItem {
    pub sent: usize,
    pub tok: usize,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

/// A constituent span; `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanItem {
    pub sent: usize,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Items {
    Posi(Vec<PosiItem>),
    /// Spans index into word-level tensor rows laid out sentence after
    /// sentence; `sent_lengths` gives the number of rows per sentence.
    Colab {
        sent_lengths: Vec<usize>,
        spans: Vec<SpanItem>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub task: Task,
    pub label_set: Vec<String>,
    pub items: Items,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    task: Task,
    label_set: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sent_lengths: Option<Vec<usize>>,
    items: Vec<serde_json::Value>,
}

impl DatasetManifest {
    pub fn posi(label_set: Vec<String>, items: Vec<PosiItem>) -> Result<Self> {
        let m = DatasetManifest {
            task: Task::Posi,
            label_set,
            items: Items::Posi(items),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn colab(label_set: Vec<String>, sent_lengths: Vec<usize>, spans: Vec<SpanItem>) -> Result<Self> {
        let m = DatasetManifest {
            task: Task::Colab,
            label_set,
            items: Items::Colab {
                sent_lengths,
                spans,
            },
        };
        m.validate()?;
        Ok(m)
    }

    /// Number of tensor rows this manifest describes.
    pub fn row_count(&self) -> usize {
        match &self.items {
            Items::Posi(items) => items.len(),
            Items::Colab { sent_lengths, .. } => sent_lengths.iter().sum(),
        }
    }

    /// Number of clusterable items (tokens or spans).
    pub fn item_count(&self) -> usize {
        match &self.items {
            Items::Posi(items) => items.len(),
            Items::Colab { spans, .. } => spans.len(),
        }
    }

    pub fn posi_items(&self) -> Option<&[PosiItem]> {
        match &self.items {
            Items::Posi(items) => Some(items),
            Items::Colab { .. } => None,
        }
    }

    pub fn spans(&self) -> Option<&[SpanItem]> {
        match &self.items {
            Items::Colab { spans, .. } => Some(spans),
            Items::Posi(_) => None,
        }
    }

    /// First tensor row of each sentence (CoLab only).
    pub fn sentence_offsets(&self) -> Option<Vec<usize>> {
        match &self.items {
            Items::Colab { sent_lengths, .. } => {
                let mut acc = 0;
                Some(
                    sent_lengths
                        .iter()
                        .map(|&l| {
                            let o = acc;
                            acc += l;
                            o
                        })
                        .collect(),
                )
            }
            Items::Posi(_) => None,
        }
    }

    fn golds(&self) -> Vec<Option<&str>> {
        match &self.items {
            Items::Posi(items) => items.iter().map(|i| i.gold.as_deref()).collect(),
            Items::Colab { spans, .. } => spans.iter().map(|s| s.gold.as_deref()).collect(),
        }
    }

    /// Gold label ids (indices into `label_set`) per item, or `None` for
    /// unlabelled manifests.
    pub fn gold_ids(&self) -> Option<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .label_set
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        self.golds()
            .into_iter()
            .map(|g| g.and_then(|g| index.get(g).copied()))
            .collect()
    }

    pub fn is_labelled(&self) -> bool {
        self.item_count() > 0 && self.golds().iter().all(Option::is_some)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.label_set {
            if !seen.insert(l.as_str()) {
                return Err(DataError::Validation(format!("duplicate label {l:?} in label_set")));
            }
        }
        let golds = self.golds();
        let labelled = golds.iter().filter(|g| g.is_some()).count();
        if labelled != 0 && labelled != golds.len() {
            return Err(DataError::Validation(
                "gold labels must be given for all items or for none".into(),
            ));
        }
        if let Some(bad) = golds.iter().flatten().find(|g| !seen.contains(*g)) {
            return Err(DataError::Validation(format!("gold label {bad:?} not in label_set")));
        }
        match &self.items {
            Items::Posi(items) => {
                let mut pos = HashSet::new();
                for it in items {
                    if !pos.insert((it.sent, it.tok)) {
                        return Err(DataError::Validation(format!(
                            "duplicate token position ({}, {})",
                            it.sent, it.tok
                        )));
                    }
                }
            }
            Items::Colab {
                sent_lengths,
                spans,
            } => {
                for s in spans {
                    if s.start > s.end {
                        return Err(DataError::Validation(format!(
                            "span ({}, {}, {}) has start > end",
                            s.sent, s.start, s.end
                        )));
                    }
                    match sent_lengths.get(s.sent) {
                        Some(&len) if s.end < len => {}
                        _ => {
                            return Err(DataError::Validation(format!(
                                "span ({}, {}, {}) outside its sentence",
                                s.sent, s.start, s.end
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let (sent_lengths, items): (Option<Vec<usize>>, Vec<serde_json::Value>) = match &self.items {
            Items::Posi(items) => (
                None,
                items.iter().map(|i| serde_json::to_value(i).unwrap()).collect(),
            ),
            Items::Colab {
                sent_lengths,
                spans,
            } => (
                Some(sent_lengths.clone()),
                spans.iter().map(|s| serde_json::to_value(s).unwrap()).collect(),
            ),
        };
        let raw = RawManifest {
            task: self.task,
            label_set: self.label_set.clone(),
            sent_lengths,
            items,
        };
        serde_json::to_string(&raw).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let raw: RawManifest = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let items = match raw.task {
            Task::Posi => {
                if raw.sent_lengths.is_some() {
                    return Err("sent_lengths is only valid for colab manifests".into());
                }
                Items::Posi(
                    raw.items
                        .into_iter()
                        .map(serde_json::from_value)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| format!("bad posi item: {e}"))?,
                )
            }
            Task::Colab => Items::Colab {
                sent_lengths: raw
                    .sent_lengths
                    .ok_or("colab manifest requires sent_lengths")?,
                spans: raw
                    .items
                    .into_iter()
                    .map(serde_json::from_value)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("bad colab item: {e}"))?,
            },
        };
        Ok(DatasetManifest {
            task: raw.task,
            label_set: raw.label_set,
            items,
        })
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let m = DatasetManifest::from_json(&text).map_err(|msg| DataError::format(path, msg))?;
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    fs::write(path, manifest.to_json()).map_err(|e| DataError::io(path, e))
}
