//! Task-specific input composition: last-n-gram morphology vectors for
//! tokens, and span vectors built from token rows.

use std::collections::BTreeSet;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Dataset, DatasetManifest, MorphTable, Task};
use crate::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum FeatError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported task {0:?} for this feature")]
    UnsupportedTask(Task),
}

pub type Result<T, E = FeatError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanMode {
    #[default]
    EndpointsConcat,
    Mean,
    Max,
}

impl SpanMode {
    pub fn width(self, token_dim: usize) -> usize {
        match self {
            SpanMode::EndpointsConcat => 2 * token_dim,
            SpanMode::Mean | SpanMode::Max => token_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Morph<'a> {
    None,
    Ngram { order: usize, table: &'a MorphTable },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec<'a> {
    pub morph: Morph<'a>,
    pub span_mode: SpanMode,
}

/// The final `order` Unicode scalar values of `surface` (all of it if shorter).
pub fn last_ngram(surface: &str, order: usize) -> Result<String> {
    if surface.is_empty() {
        return Err(FeatError::Argument("empty surface form".into()));
    }
    if order == 0 {
        return Err(FeatError::Argument("n-gram order must be at least 1".into()));
    }
    let chars: Vec<char> = surface.chars().collect();
    let start = chars.len().saturating_sub(order);
    Ok(chars[start..].iter().collect())
}

/// Appends the morphology vector of each token's last n-gram to its row.
/// Unknown n-grams get a zero block; the second return value counts them.
pub fn augment_tokens(dataset: &Dataset, spec: &FeatureSpec<'_>) -> Result<(Dataset, usize)> {
    let items = dataset
        .manifest
        .posi_items()
        .ok_or(FeatError::UnsupportedTask(dataset.task()))?;
    let (order, table) = match spec.morph {
        Morph::None => return Ok((dataset.clone(), 0)),
        Morph::Ngram { order, table } => (order, table),
    };
    let dm = table.dim();
    let mut morph = Array2::<f32>::zeros((items.len(), dm));
    let mut oov = 0;
    for (i, item) in items.iter().enumerate() {
        let key = last_ngram(&item.surface, order)?;
        match table.get(&key) {
            Some(v) => morph.row_mut(i).assign(&ndarray::ArrayView1::from(v)),
            None => oov += 1,
        }
    }
    if oov > 0 {
        log::warn!("{oov} of {} tokens have no vector for their last {order}-gram", items.len());
    }
    let matrix = concatenate(Axis(1), &[dataset.matrix.view(), morph.view()])
        .expect("row counts agree");
    let out = Dataset::new(matrix, dataset.manifest.clone())
        .map_err(|e| FeatError::Argument(e.to_string()))?;
    Ok((out, oov))
}

/// Span vector from the token rows of one sentence; `end` is inclusive.
pub fn span_repr(sentence: ArrayView2<'_, f32>, start: usize, end: usize, mode: SpanMode) -> Result<Array1<f32>> {
    if start > end || end >= sentence.nrows() {
        return Err(FeatError::Argument(format!(
            "span [{start}, {end}] outside a {}-token sentence",
            sentence.nrows()
        )));
    }
    let tokens = sentence.slice(s![start..=end, ..]);
    Ok(match mode {
        SpanMode::EndpointsConcat => {
            concatenate(Axis(0), &[sentence.row(start), sentence.row(end)]).expect("same width")
        }
        SpanMode::Mean => tokens.mean_axis(Axis(0)).expect("non-empty span"),
        SpanMode::Max => tokens.fold_axis(Axis(0), f32::NEG_INFINITY, |&a, &b| a.max(b)),
    })
}

/// Indices of spans longer than one token whose gold label is not excluded.
pub fn filter_spans(manifest: &DatasetManifest, excluded: &BTreeSet<String>) -> Vec<usize> {
    manifest
        .spans()
        .map(|spans| {
            spans
                .iter()
                .enumerate()
                .filter(|(_, s)| s.end > s.start)
                .filter(|(_, s)| s.gold.as_ref().is_none_or(|g| !excluded.contains(g)))
                .map(|(i, _)| i)
                .collect()
        })
        .unwrap_or_default()
}

pub fn default_excluded_labels() -> BTreeSet<String> {
    BTreeSet::from(["TOP".to_string()])
}

/// One row per selected span of a token-level CoLab dataset.
pub fn span_features(dataset: &Dataset, selected: &[usize], mode: SpanMode) -> Result<Matrix> {
    let spans = dataset
        .manifest
        .spans()
        .ok_or(FeatError::UnsupportedTask(dataset.task()))?;
    let offsets = dataset.manifest.sentence_offsets().expect("colab manifest");
    let lengths: Vec<usize> = match &dataset.manifest.items {
        crate::dataio::Items::Colab { sent_lengths, .. } => sent_lengths.clone(),
        _ => unreachable!(),
    };
    let width = mode.width(dataset.dim());
    let mut out = Array2::<f32>::zeros((selected.len(), width));
    for (row, &idx) in selected.iter().enumerate() {
        let span = spans
            .get(idx)
            .ok_or_else(|| FeatError::Argument(format!("span index {idx} out of range")))?;
        let lo = offsets[span.sent];
        let sentence = dataset.matrix.slice(s![lo..lo + lengths[span.sent], ..]);
        out.row_mut(row).assign(&span_repr(sentence, span.start, span.end, mode)?);
    }
    Ok(out)
}
