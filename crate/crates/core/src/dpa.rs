//! Prior analyzer: class priors from global classifier weight norms, and the
//! diagnostics that compare them against the true class distribution.

use serde::{Deserialize, Serialize};

use crate::data::ClassCountVector;
use crate::error::{Error, Result};

/// Probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorVector(Vec<f64>);

impl PriorVector {
    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    /// Normalize nonnegative masses to a share of their total.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        if masses.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("masses", "must be finite and >= 0"));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateNorms);
        }
        Ok(Self(masses.iter().map(|v| v / total).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `probs[j] = norms[j] / sum(norms)`. All-zero norms are an error; callers
/// fall back to [`PriorVector::uniform`].
pub fn estimate_prior(norms: &[f64]) -> Result<PriorVector> {
    PriorVector::from_masses(norms)
}

/// Indices of the `k` smallest values. Among equal values the higher class
/// index counts as smaller, matching the head-to-tail ranking in `metrics`.
fn smallest_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)));
    idx.truncate(k);
    idx
}

/// Number of tail classes used by [`tail_identification_accuracy`].
pub fn tail_size(num_classes: usize, tail_fraction: f64) -> usize {
    ((tail_fraction * num_classes as f64).ceil() as usize).clamp(1, num_classes)
}

/// Fraction of the true tail (the `ceil(tail_fraction * M)` rarest classes)
/// that also carries the least prior mass.
pub fn tail_identification_accuracy(
    prior: &PriorVector,
    true_counts: &ClassCountVector,
    tail_fraction: f64,
) -> Result<f64> {
    let m = true_counts.num_classes();
    if prior.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "prior has {} classes, counts have {m}",
            prior.len()
        )));
    }
    let k = tail_size(m, tail_fraction);
    let counts: Vec<f64> = true_counts.as_slice().iter().map(|&c| c as f64).collect();
    let truth = smallest_k(&counts, k);
    let predicted = smallest_k(prior.probs(), k);
    let hits = truth.iter().filter(|c| predicted.contains(c)).count();
    Ok(hits as f64 / k as f64)
}

/// Euclidean distance between the prior and the normalized true counts.
pub fn prior_l2_distance(prior: &PriorVector, true_counts: &ClassCountVector) -> Result<f64> {
    if prior.len() != true_counts.num_classes() {
        return Err(Error::ShapeMismatch("prior and counts differ in length".into()));
    }
    Ok(prior
        .probs()
        .iter()
        .zip(true_counts.distribution())
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt())
}
