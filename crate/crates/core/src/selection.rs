//! Turning tag scores into pseudo-tag sets, and pruning weakly aligned samples.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scoring::TagScores;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected tags in descending score order.
    pub selected: Vec<String>,
    /// All tags with their scores, descending; ties keep candidate order.
    pub ordering: Vec<(String, f64)>,
    /// `ordering[k].1 - ordering[k + 1].1`.
    pub gaps: Vec<f64>,
    /// Index in `ordering` of the last selected tag (gap mode only).
    pub boundary_index: Option<usize>,
}

impl SelectionResult {
    pub fn contains(&self, tag: &str) -> bool {
        self.selected.iter().any(|t| t == tag)
    }
}

/// How pseudo-tags are picked from scores.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SelectionMode {
    #[default]
    Gap,
    Threshold(f64),
}

impl SelectionMode {
    pub fn apply(self, scores: &TagScores) -> Result<SelectionResult> {
        match self {
            SelectionMode::Gap => select_by_gap(scores),
            SelectionMode::Threshold(t) => Ok(select_by_threshold(scores, t)),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMode::Gap => f.write_str("gap"),
            SelectionMode::Threshold(t) => write!(f, "threshold:{t}"),
        }
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    /// Accepts `gap` or `threshold:<value>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "gap" {
            return Ok(Self::Gap);
        }
        if let Some(v) = s.strip_prefix("threshold:") {
            return v
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .map(Self::Threshold)
                .ok_or_else(|| Error::Config(format!("bad threshold value {v:?}")));
        }
        Err(Error::Config(format!(
            "unknown selection {s:?}; expected gap or threshold:<value>"
        )))
    }
}

fn descending(scores: &TagScores) -> Vec<(String, f64)> {
    let mut ordering = scores.entries.clone();
    // stable: equal scores keep candidate order
    ordering.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
    ordering
}

fn gaps(ordering: &[(String, f64)]) -> Vec<f64> {
    ordering.windows(2).map(|w| w[0].1 - w[1].1).collect()
}

/// Keeps every tag ranked above the largest drop between consecutive scores.
///
/// The first maximal gap wins ties; a single candidate is always selected.
pub fn select_by_gap(scores: &TagScores) -> Result<SelectionResult> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("gap selection needs at least one candidate".into()));
    }
    let ordering = descending(scores);
    let gaps = gaps(&ordering);
    let mut boundary = 0;
    for (k, &g) in gaps.iter().enumerate() {
        if g > gaps[boundary] {
            boundary = k;
        }
    }
    let selected = ordering[..=boundary].iter().map(|(t, _)| t.clone()).collect();
    Ok(SelectionResult {
        selected,
        ordering,
        gaps,
        boundary_index: Some(boundary),
    })
}

/// Keeps every tag whose score is strictly above `threshold`.
pub fn select_by_threshold(scores: &TagScores, threshold: f64) -> SelectionResult {
    let ordering = descending(scores);
    let gaps = gaps(&ordering);
    let selected = ordering
        .iter()
        .filter(|(_, s)| *s > threshold)
        .map(|(t, _)| t.clone())
        .collect();
    SelectionResult {
        selected,
        ordering,
        gaps,
        boundary_index: None,
    }
}

/// Keeps samples whose similarity exceeds mean + population standard deviation.
pub fn prune_samples(pair_sims: &[(String, f64)]) -> Result<Vec<String>> {
    if pair_sims.is_empty() {
        return Err(Error::EmptyInput("no samples to prune".into()));
    }
    let n = pair_sims.len() as f64;
    let mean = pair_sims.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = pair_sims.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / n;
    let cutoff = mean + var.sqrt();
    Ok(pair_sims
        .iter()
        .filter(|(_, v)| *v > cutoff)
        .map(|(id, _)| id.clone())
        .collect())
}
