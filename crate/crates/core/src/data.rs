//! Long-tailed synthetic data and non-IID client partitioning.

use std::io::{BufRead, Write};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Number of times a partition is redrawn when it leaves some client empty.
pub const MAX_PARTITION_REROLLS: usize = 20;

/// Per-class sample counts of a global dataset. Every class has at least one
/// sample and there are at least two classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCountVector(Vec<usize>);

impl ClassCountVector {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::invalid("counts", "need at least two classes"));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::invalid("counts", format!("class {c} has zero samples")));
        }
        Ok(Self(counts))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Largest over smallest class count.
    pub fn imbalance_factor(&self) -> f64 {
        let max = *self.0.iter().max().unwrap() as f64;
        let min = *self.0.iter().min().unwrap() as f64;
        max / min
    }

    /// Counts normalized to a probability vector.
    pub fn distribution(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.0.iter().map(|&n| n as f64 / total).collect()
    }
}

/// Exponential long-tailed profile `n_j = round(n_max * IF^(-j/(M-1)))`.
pub fn make_longtailed_counts(
    num_classes: usize,
    n_max: usize,
    imbalance: f64,
) -> Result<ClassCountVector> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "must be at least 2"));
    }
    if imbalance < 1.0 || !imbalance.is_finite() {
        return Err(Error::invalid("imbalance", format!("must be >= 1, got {imbalance}")));
    }
    if (n_max as f64) < imbalance {
        return Err(Error::invalid(
            "n_max",
            format!("{n_max} < imbalance factor {imbalance}; the smallest class would be empty"),
        ));
    }
    let last = (num_classes - 1) as f64;
    let counts = (0..num_classes)
        .map(|j| {
            let n = n_max as f64 * imbalance.powf(-(j as f64) / last);
            (n.round() as usize).max(1)
        })
        .collect();
    ClassCountVector::new(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Isotropic Gaussian mixture the samples are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub means: Vec<Vec<f64>>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDataset {
    pub samples: Vec<Sample>,
    pub counts: ClassCountVector,
    pub generator: GeneratorSpec,
    pub seed: u64,
}

impl GlobalDataset {
    pub fn num_classes(&self) -> usize {
        self.counts.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.generator.means[0].len()
    }
}

/// Class means on a random orthonormal frame, scaled so every pair of means is
/// `separation` apart. When there are more classes than dimensions the
/// surplus means are random directions of the same length.
fn class_means(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0, 0, Stream::ClassMeans);
    let radius = separation / std::f64::consts::SQRT_2;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while basis.len() < num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if basis.len() < dim {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * radius).collect())
        .collect()
}

fn draw_samples(
    means: &[Vec<f64>],
    per_class: impl Fn(usize) -> usize,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Vec<Sample> {
    let mut samples = Vec::new();
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class(label) {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + noise_std * z
                })
                .collect();
            samples.push(Sample { features, label });
        }
    }
    samples
}

/// Draw a long-tailed training set with exactly `counts` samples per class and
/// a balanced test set with `test_per_class` samples for every class.
pub fn synthesize_dataset(
    dim: usize,
    counts: &ClassCountVector,
    class_separation: f64,
    noise_std: f64,
    test_per_class: usize,
    seed: u64,
) -> Result<(GlobalDataset, Vec<Sample>)> {
    if dim < 2 {
        return Err(Error::invalid("dim", "must be at least 2"));
    }
    if class_separation < 0.0 || !class_separation.is_finite() {
        return Err(Error::invalid("class_separation", "must be finite and >= 0"));
    }
    if noise_std < 0.0 || !noise_std.is_finite() {
        return Err(Error::invalid("noise_std", "must be finite and >= 0"));
    }
    let means = class_means(counts.num_classes(), dim, class_separation, seed);
    let train = draw_samples(
        &means,
        |c| counts.as_slice()[c],
        noise_std,
        &mut stream_rng(seed, 0, 0, Stream::TrainSamples),
    );
    let test = draw_samples(
        &means,
        |_| test_per_class,
        noise_std,
        &mut stream_rng(seed, 0, 0, Stream::TestSamples),
    );
    let dataset = GlobalDataset {
        samples: train,
        counts: counts.clone(),
        generator: GeneratorSpec { means, noise_std },
        seed,
    };
    Ok((dataset, test))
}

/// One simulated client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub samples: Vec<Sample>,
    /// Local per-class counts; zeros are allowed.
    pub local_counts: Vec<usize>,
    /// Set when the client ended up with no samples after all rerolls.
    pub flagged_empty: bool,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn dirichlet(alpha: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated > 0");
    let mut p: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|x| *x /= total);
    } else {
        // every gamma draw underflowed: the limit of Dir(alpha -> 0) is a vertex
        p.iter_mut().for_each(|x| *x = 0.0);
        p[rng.random_range(0..n)] = 1.0;
    }
    p
}

/// Split `total` items by `proportions` so the parts sum to `total` exactly.
/// Leftover units go to the largest fractional remainders, ties by index.
pub fn largest_remainder(total: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        parts[k] += 1;
    }
    parts
}

/// Class-wise symmetric Dirichlet partition over `num_clients` clients.
///
/// For every class a proportion vector is drawn from `Dir(alpha * 1_N)` and
/// that class's samples are dealt out accordingly. A draw that leaves some
/// client without any sample is redrawn up to [`MAX_PARTITION_REROLLS`] times;
/// after that the empty clients are kept and flagged.
pub fn partition_dirichlet(
    dataset: &GlobalDataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients", "must be at least 1"));
    }
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::invalid("alpha", format!("must be > 0, got {alpha}")));
    }
    let m = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }

    let mut owner = vec![0usize; dataset.samples.len()];
    for attempt in 0..=MAX_PARTITION_REROLLS {
        let mut rng = stream_rng(seed, attempt as u64, 0, Stream::Partition);
        let mut sizes = vec![0usize; num_clients];
        for indices in &by_class {
            let parts = largest_remainder(indices.len(), &dirichlet(alpha, num_clients, &mut rng));
            let mut slots: Vec<usize> = parts
                .iter()
                .enumerate()
                .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
                .collect();
            slots.shuffle(&mut rng);
            for (&i, &k) in indices.iter().zip(&slots) {
                owner[i] = k;
                sizes[k] += 1;
            }
        }
        if sizes.iter().all(|&n| n > 0) {
            break;
        }
        if attempt == MAX_PARTITION_REROLLS {
            let empty = sizes.iter().filter(|&&n| n == 0).count();
            warn!("{empty} of {num_clients} clients left empty after {MAX_PARTITION_REROLLS} rerolls");
        }
    }

    let mut shards: Vec<ClientShard> = (0..num_clients)
        .map(|client_id| ClientShard {
            client_id,
            samples: Vec::new(),
            local_counts: vec![0; m],
            flagged_empty: false,
        })
        .collect();
    for (sample, &k) in dataset.samples.iter().zip(&owner) {
        shards[k].local_counts[sample.label] += 1;
        shards[k].samples.push(sample.clone());
    }
    for shard in &mut shards {
        shard.flagged_empty = shard.samples.is_empty();
    }
    Ok(shards)
}

/// Write samples as `label,f1,f2,...` lines.
pub fn write_samples<W: Write>(mut out: W, samples: &[Sample]) -> std::io::Result<()> {
    for s in samples {
        write!(out, "{}", s.label)?;
        for x in &s.features {
            write!(out, ",{x:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<samples>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::invalid("samples", format!("malformed line {}", lineno + 1));
        let mut fields = line.split(',');
        let label = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let features = fields
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample { features, label });
    }
    Ok(samples)
}
