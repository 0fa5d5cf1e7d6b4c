//! Federated orchestration: client selection, local training with the
//! gradient balancer wired in (or bypassed), and sample-weighted averaging.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, GlobalDataset, Sample};
use crate::dpa::{self, PriorVector};
use crate::error::{Error, Result};
use crate::metrics::{self, ClassGroups, GroupAccuracy, RoundMetrics};
use crate::model::{self, Coefficients, ModelMode, ModelParams};
use crate::rng::{stream_rng, Stream};
use crate::sgb::{SgbBank, SgbGains};

/// Fraction of classes treated as tail by the prior diagnostics.
pub const TAIL_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FedGrab,
    Fedavg,
    FedavgThenTauNorm,
}

/// Where the per-class gate thresholds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSource {
    /// Prior from the received global classifier's weight norms.
    Dpa,
    /// The client's own label distribution.
    LocalCounts,
    /// Fixed thresholds: `0` always re-weights a class, `1` never does.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: ModelMode,
    #[serde(default)]
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::Linear,
            hidden_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub n_clients: usize,
    pub participation_fraction: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub method: Method,
    pub model: ModelConfig,
    pub sgb: SgbGains,
    /// Rounds (1-based, inclusive) that use the uniform prior.
    pub warmup_rounds: usize,
    pub gate: GateSource,
    pub tau: f64,
    pub master_seed: u64,
    pub parallel: bool,
    pub trace: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            participation_fraction: 1.0,
            rounds: 120,
            local_epochs: 2,
            batch_size: 8,
            learning_rate: 0.01,
            method: Method::FedGrab,
            model: ModelConfig::default(),
            sgb: SgbGains::default(),
            warmup_rounds: 5,
            gate: GateSource::Dpa,
            tau: 1.0,
            master_seed: 0,
            parallel: true,
            trace: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, c: &str| Err(Error::config(format!("fed.{field}"), c));
        if self.n_clients == 0 {
            return fail("n_clients", "must be >= 1");
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return fail("participation_fraction", "must lie in (0, 1]");
        }
        if self.rounds == 0 {
            return fail("rounds", "must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be finite and > 0");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail("tau", "must lie in [0, 1]");
        }
        if self.model.mode == ModelMode::Mlp && self.model.hidden_dim == 0 {
            return Err(Error::config("model.hidden_dim", "must be >= 1 in mlp mode"));
        }
        if let GateSource::Fixed(t) = &self.gate {
            if t.iter().any(|v| !v.is_finite()) {
                return fail("gate", "fixed thresholds must be finite");
            }
        }
        self.sgb.validate()
    }
}

/// Uniform sample without replacement of `max(1, round(fraction * N))`
/// non-empty clients, returned in ascending id order.
pub fn select_clients<R: Rng + ?Sized>(
    shards: &[ClientShard],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = shards
        .iter()
        .filter(|s| !s.flagged_empty && !s.is_empty())
        .map(|s| s.client_id)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleClients);
    }
    let wanted = ((fraction * shards.len() as f64).round() as usize).max(1);
    let k = wanted.min(eligible.len());
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// One row of the optional controller trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgbTraceRow {
    pub round: usize,
    pub client: usize,
    pub class: usize,
    pub step: u64,
    pub delta: f64,
    pub error: f64,
    pub u: f64,
    pub beta_pos: f64,
    pub beta_neg: f64,
}

pub const SGB_TRACE_HEADER: &str = "round,client,class,step,delta,error,u,beta_pos,beta_neg";

impl SgbTraceRow {
    pub fn csv(&self) -> String {
        use metrics::format_float as f;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.round,
            self.client,
            self.class,
            self.step,
            f(self.delta),
            f(self.error),
            f(self.u),
            f(self.beta_pos),
            f(self.beta_neg)
        )
    }
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub bank: SgbBank,
    pub sample_count: usize,
    pub trace: Vec<SgbTraceRow>,
}

/// Prior from the global classifier, uniform when the norms are all zero.
pub fn global_prior(global: &ModelParams) -> PriorVector {
    dpa::estimate_prior(&model::classifier_weight_norms(global))
        .unwrap_or_else(|_| PriorVector::uniform(global.num_classes()))
}

fn gate_thresholds(
    global: &ModelParams,
    shard: &ClientShard,
    config: &FedConfig,
    round: usize,
) -> Result<Vec<f64>> {
    let m = global.num_classes();
    let thresholds = match &config.gate {
        GateSource::Dpa if round <= config.warmup_rounds => PriorVector::uniform(m).probs().to_vec(),
        GateSource::Dpa => global_prior(global).probs().to_vec(),
        GateSource::LocalCounts => {
            let masses: Vec<f64> = shard.local_counts.iter().map(|&c| c as f64).collect();
            PriorVector::from_masses(&masses)?.probs().to_vec()
        }
        GateSource::Fixed(t) => t.clone(),
    };
    if thresholds.len() != m {
        return Err(Error::config(
            "fed.gate",
            format!("{} thresholds for {m} classes", thresholds.len()),
        ));
    }
    Ok(thresholds)
}

/// Local training of one client for one round.
///
/// `fed_grab` starts a fresh balancer bank, derives gate thresholds, and for
/// every batch runs forward, gradient split, balancer step, and a re-weighted
/// SGD step. The other methods run the same loop with neutral coefficients;
/// the bank then only records the raw magnitudes.
pub fn client_update(
    global: &ModelParams,
    shard: &ClientShard,
    config: &FedConfig,
    round: usize,
) -> Result<ClientUpdate> {
    let client = shard.client_id;
    let wrap = |e: Error| Error::Divergence {
        round,
        client,
        source: Box::new(e),
    };
    if shard.is_empty() {
        return Err(Error::invalid("shard", format!("client {client} has no samples")));
    }
    let m = global.num_classes();
    let reweight = config.method == Method::FedGrab;
    let thresholds = if reweight {
        gate_thresholds(global, shard, config, round)?
    } else {
        Vec::new()
    };

    let seed = config.master_seed;
    let mut order_rng = stream_rng(seed, round as u64, client as u64, Stream::BatchOrder);
    let mut gate_rng = stream_rng(seed, round as u64, client as u64, Stream::Gate);

    let mut params = global.clone();
    let mut bank = SgbBank::new(m, config.sgb);
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let neutral = vec![Coefficients::NEUTRAL; m];

    for _ in 0..config.local_epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| &shard.samples[i].features[..]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| shard.samples[i].label).collect();
            let fwd = model::forward(&params, &inputs).map_err(wrap)?;
            let split = model::logit_gradient_split(&fwd, &labels);
            let coeffs = if reweight {
                let steps = bank.step(&thresholds, &split, &mut gate_rng).map_err(wrap)?;
                if config.trace {
                    trace.extend(steps.iter().enumerate().map(|(class, s)| SgbTraceRow {
                        round,
                        client,
                        class,
                        step: bank.states[class].step,
                        delta: s.delta,
                        error: s.error,
                        u: s.u,
                        beta_pos: s.coeffs.pos,
                        beta_neg: s.coeffs.neg,
                    }));
                }
                steps.into_iter().map(|s| s.coeffs).collect()
            } else {
                bank.observe_neutral(&split);
                neutral.clone()
            };
            model::apply_reweighted_backprop(
                &mut params,
                &fwd,
                &inputs,
                &labels,
                &coeffs,
                config.learning_rate,
            )
            .map_err(wrap)?;
        }
    }
    Ok(ClientUpdate {
        client_id: client,
        params,
        bank,
        sample_count: shard.len(),
        trace,
    })
}

/// Sample-count weighted parameter average.
pub fn fedavg_aggregate(updates: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::invalid("updates", "need at least one update"))?;
    if let Some((bad, _)) = updates.iter().find(|(p, _)| !p.same_shape(first)) {
        return Err(Error::ShapeMismatch(format!(
            "update shapes differ: {:?} vs {:?}",
            bad.buffers().iter().map(|b| b.len()).collect::<Vec<_>>(),
            first.buffers().iter().map(|b| b.len()).collect::<Vec<_>>()
        )));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("updates", "total sample count is zero"));
    }
    let mut out = (*first).clone();
    out.buffers_mut()
        .into_iter()
        .for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
    for (params, n) in updates {
        let w = *n as f64 / total as f64;
        for (acc, src) in out.buffers_mut().into_iter().zip(params.buffers()) {
            acc.iter_mut().zip(src).for_each(|(a, s)| *a += w * s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub global: ModelParams,
    pub metrics: RoundMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauNormOutcome {
    pub tau: f64,
    pub before: GroupAccuracy,
    pub after: GroupAccuracy,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub groups: ClassGroups,
    pub rounds: Vec<RoundRecord>,
    pub tau_norm: Option<TauNormOutcome>,
    pub trace: Vec<SgbTraceRow>,
}

impl ExperimentOutcome {
    pub fn final_model(&self) -> &ModelParams {
        &self.rounds.last().expect("at least one round").global
    }

    pub fn final_metrics(&self) -> &RoundMetrics {
        &self.rounds.last().expect("at least one round").metrics
    }

    pub fn acc_few_history(&self) -> Vec<f64> {
        self.rounds
            .iter()
            .map(|r| r.metrics.acc_few.unwrap_or(f64::NAN))
            .collect()
    }
}

pub fn evaluate(params: &ModelParams, test: &[Sample], groups: &ClassGroups) -> Result<GroupAccuracy> {
    let inputs: Vec<&[f64]> = test.iter().map(|s| &s.features[..]).collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let preds = model::forward(params, &inputs)?.predictions();
    metrics::group_accuracy(&preds, &labels, groups)
}

fn round_metrics(
    global: &ModelParams,
    updates: &[ClientUpdate],
    dataset: &GlobalDataset,
    test: &[Sample],
    groups: &ClassGroups,
) -> Result<RoundMetrics> {
    let acc = evaluate(global, test, groups)?;
    let banks: Vec<SgbBank> = updates.iter().map(|u| u.bank.clone()).collect();
    let stats = metrics::delta_statistics(&banks);
    let raw_rows = |f: fn(&crate::sgb::SgbClassState) -> f64| -> Vec<f64> {
        let rows: Vec<Vec<f64>> = banks.iter().map(|b| b.states.iter().map(f).collect()).collect();
        metrics::column_statistics(&rows).iter().map(|s| s.mean).collect()
    };
    let prior = global_prior(global);
    Ok(RoundMetrics {
        acc_all: acc.all,
        acc_many: acc.many,
        acc_med: acc.med,
        acc_few: acc.few,
        delta_mean: stats.iter().map(|s| s.mean).collect(),
        delta_std: stats.iter().map(|s| s.std).collect(),
        raw_delta_mean: raw_rows(|s| s.raw_delta()),
        raw_magnitude_mean: raw_rows(|s| s.raw_magnitude()),
        prior_l2: dpa::prior_l2_distance(&prior, &dataset.counts)?,
        tail_id_acc: dpa::tail_identification_accuracy(&prior, &dataset.counts, TAIL_FRACTION)?,
    })
}

pub fn run_experiment(
    config: &FedConfig,
    dataset: &GlobalDataset,
    test: &[Sample],
    shards: &[ClientShard],
) -> Result<ExperimentOutcome> {
    run_experiment_with(config, dataset, test, shards, |_| {})
}

/// Round loop; `on_round` sees every record as soon as it is complete, so
/// callers keep partial results if a later round diverges.
pub fn run_experiment_with(
    config: &FedConfig,
    dataset: &GlobalDataset,
    test: &[Sample],
    shards: &[ClientShard],
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<ExperimentOutcome> {
    config.validate()?;
    if shards.len() != config.n_clients {
        return Err(Error::config(
            "fed.n_clients",
            format!("{} clients configured but {} shards given", config.n_clients, shards.len()),
        ));
    }
    let groups = metrics::split_many_med_few(&dataset.counts);
    let mut global = model::init_model(
        dataset.dim(),
        config.model.hidden_dim,
        dataset.num_classes(),
        config.model.mode,
        config.master_seed,
    )?;
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut trace = Vec::new();

    for round in 1..=config.rounds {
        let mut sel_rng = stream_rng(config.master_seed, round as u64, 0, Stream::Selection);
        let selected = select_clients(shards, config.participation_fraction, &mut sel_rng)?;
        let run_one = |&k: &usize| client_update(&global, &shards[k], config, round);
        let updates: Vec<ClientUpdate> = if config.parallel {
            selected.par_iter().map(run_one).collect::<Result<_>>()?
        } else {
            selected.iter().map(run_one).collect::<Result<_>>()?
        };
        let weighted: Vec<(&ModelParams, usize)> =
            updates.iter().map(|u| (&u.params, u.sample_count)).collect();
        global = fedavg_aggregate(&weighted)?;
        let metrics = round_metrics(&global, &updates, dataset, test, &groups)?;
        for u in updates {
            trace.extend(u.trace);
        }
        let record = RoundRecord {
            round,
            selected,
            global: global.clone(),
            metrics,
        };
        on_round(&record);
        rounds.push(record);
    }

    let tau_norm = if config.method == Method::FedavgThenTauNorm {
        let before = evaluate(&global, test, &groups)?;
        let normalized = model::tau_normalize(&global, config.tau)?;
        let after = evaluate(&normalized, test, &groups)?;
        Some(TauNormOutcome {
            tau: config.tau,
            before,
            after,
        })
    } else {
        None
    };
    Ok(ExperimentOutcome {
        groups,
        rounds,
        tau_norm,
        trace,
    })
}
