//! Evaluation metrics: grouped accuracy, cross-client controller statistics,
//! and rounds-to-target.

use serde::{Deserialize, Serialize};

use crate::data::ClassCountVector;
use crate::error::{Error, Result};
use crate::sgb::SgbBank;

/// Head / middle / tail class groups, fixed from the true global counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassGroups {
    pub many: Vec<usize>,
    pub med: Vec<usize>,
    pub few: Vec<usize>,
}

/// Rank classes by count (descending, ties by lower index first); the top
/// `ceil(M/3)` are `many`, the bottom `floor(0.3 M)` are `few`.
pub fn split_many_med_few(true_counts: &ClassCountVector) -> ClassGroups {
    let counts = true_counts.as_slice();
    let m = counts.len();
    let mut ranked: Vec<usize> = (0..m).collect();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let n_many = m.div_ceil(3);
    let n_few = (m * 3) / 10;
    let mut groups = ClassGroups {
        many: ranked[..n_many].to_vec(),
        med: ranked[n_many..m - n_few].to_vec(),
        few: ranked[m - n_few..].to_vec(),
    };
    groups.many.sort_unstable();
    groups.med.sort_unstable();
    groups.few.sort_unstable();
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub all: f64,
    /// `None` when the group has no test samples.
    pub many: Option<f64>,
    pub med: Option<f64>,
    pub few: Option<f64>,
}

pub fn group_accuracy(
    predictions: &[usize],
    labels: &[usize],
    groups: &ClassGroups,
) -> Result<GroupAccuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("labels", "empty evaluation set"));
    }
    let acc_over = |classes: &[usize]| -> Option<f64> {
        let (mut hit, mut n) = (0usize, 0usize);
        for (&p, &y) in predictions.iter().zip(labels) {
            if classes.contains(&y) {
                n += 1;
                hit += usize::from(p == y);
            }
        }
        (n > 0).then(|| hit as f64 / n as f64)
    };
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(GroupAccuracy {
        all: correct as f64 / labels.len() as f64,
        many: acc_over(&groups.many),
        med: acc_over(&groups.med),
        few: acc_over(&groups.few),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation per column of `rows`.
pub fn column_statistics(rows: &[Vec<f64>]) -> Vec<MeanStd> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    (0..first.len())
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            MeanStd {
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

/// Per-class mean and std of the final `delta` across client banks.
pub fn delta_statistics(banks: &[SgbBank]) -> Vec<MeanStd> {
    let rows: Vec<Vec<f64>> = banks.iter().map(SgbBank::deltas).collect();
    column_statistics(&rows)
}

/// First 1-based round whose value reaches `target`.
pub fn rounds_to_target(history: &[f64], target: f64) -> Option<usize> {
    history.iter().position(|&a| a >= target).map(|i| i + 1)
}

/// End of the first `window`-round block whose mean improves on the block
/// before it by less than `tolerance`. Only block boundaries (multiples of
/// `window`) are checked.
pub fn plateau_round(history: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    if window == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (2 * window..=history.len())
        .step_by(window)
        .find(|&end| mean(&history[end - window..end]) - mean(&history[end - 2 * window..end - window]) < tolerance)
}

/// Metrics recorded after each communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub acc_all: f64,
    pub acc_many: Option<f64>,
    pub acc_med: Option<f64>,
    pub acc_few: Option<f64>,
    /// Per-class mean of the clients' final re-weighted delta.
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
    /// Per-class mean of the clients' signed raw cumulative difference.
    pub raw_delta_mean: Vec<f64>,
    /// Per-class mean of the clients' cumulative raw magnitude this round.
    pub raw_magnitude_mean: Vec<f64>,
    pub prior_l2: f64,
    pub tail_id_acc: f64,
}

impl RoundMetrics {
    pub fn delta_mean_max_abs(&self) -> f64 {
        self.delta_mean.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn delta_std_max(&self) -> f64 {
        self.delta_std.iter().fold(0.0, |m, &v| m.max(v))
    }
}

pub const ROUNDS_CSV_HEADER: &str =
    "round,acc_all,acc_many,acc_med,acc_few,prior_l2,tail_id_acc,delta_mean_max_abs,delta_std_max";

/// Nine significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn rounds_csv_row(round: usize, m: &RoundMetrics) -> String {
    [
        round.to_string(),
        format_float(m.acc_all),
        format_opt(m.acc_many),
        format_opt(m.acc_med),
        format_opt(m.acc_few),
        format_float(m.prior_l2),
        format_float(m.tail_id_acc),
        format_float(m.delta_mean_max_abs()),
        format_float(m.delta_std_max()),
    ]
    .join(",")
}
