//! Experiment configs, named presets, and the result files written per run.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/<seed>/rounds.csv      one row per round, header in ROUNDS_CSV_HEADER
//! <out>/<seed>/summary.json    final metrics plus the full config echo
//! <out>/<seed>/sgb_trace.csv   only with output.trace = true
//! <out>/<seed>/FAILED          only when the seed aborted
//! <out>/aggregate.json         mean and std of final metrics over seeds
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, ClientShard, GlobalDataset, Sample};
use crate::error::{Error, Result};
use crate::fed::{self, ExperimentOutcome, FedConfig, GateSource, Method, ModelConfig, TauNormOutcome};
use crate::metrics::{self, ClassGroups, MeanStd, RoundMetrics};
use crate::sgb::SgbGains;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub imbalance: f64,
    pub class_separation: f64,
    pub noise_std: f64,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub alpha: f64,
}

fn default_true() -> bool {
    true
}

fn default_warmup() -> usize {
    5
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    pub method: Method,
    pub participation_fraction: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_rounds: usize,
    #[serde(default = "default_gate")]
    pub gate: GateSource,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_gate() -> GateSource {
    GateSource::Dpa
}

fn default_rounds_target() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default)]
    pub trace: bool,
    /// Tail accuracy threshold for the rounds-to-target summary.
    #[serde(default = "default_rounds_target")]
    pub rounds_to_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub fed: FedSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sgb: SgbGains,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    /// The desk-scale baseline every preset starts from.
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            dataset: DatasetConfig {
                num_classes: 10,
                dim: 16,
                n_max: 500,
                imbalance: 50.0,
                class_separation: 3.0,
                noise_std: 1.0,
                test_per_class: 200,
            },
            partition: PartitionConfig {
                n_clients: 10,
                alpha: 0.5,
            },
            fed: FedSection {
                method: Method::FedGrab,
                participation_fraction: 1.0,
                rounds: 120,
                local_epochs: 2,
                batch_size: 8,
                learning_rate: 0.01,
                warmup_rounds: default_warmup(),
                gate: GateSource::Dpa,
                tau: default_tau(),
                parallel: true,
            },
            model: ModelConfig::default(),
            sgb: SgbGains::default(),
            output: OutputConfig {
                directory: PathBuf::from("runs"),
                trace: false,
                rounds_to_target: default_rounds_target(),
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let fail = |f: &str, c: &str| Err(Error::config(f, c));
        if self.seeds.is_empty() {
            return fail("seeds", "must list at least one seed");
        }
        if d.num_classes < 2 {
            return fail("dataset.num_classes", "must be >= 2");
        }
        if d.dim < 2 {
            return fail("dataset.dim", "must be >= 2");
        }
        if !(d.imbalance >= 1.0 && d.imbalance.is_finite()) {
            return fail("dataset.imbalance", "must be finite and >= 1");
        }
        if (d.n_max as f64) < d.imbalance {
            return fail("dataset.n_max", "must be >= dataset.imbalance");
        }
        if !(d.class_separation >= 0.0 && d.class_separation.is_finite()) {
            return fail("dataset.class_separation", "must be finite and >= 0");
        }
        if !(d.noise_std >= 0.0 && d.noise_std.is_finite()) {
            return fail("dataset.noise_std", "must be finite and >= 0");
        }
        if d.test_per_class == 0 {
            return fail("dataset.test_per_class", "must be >= 1");
        }
        if self.partition.n_clients == 0 {
            return fail("partition.n_clients", "must be >= 1");
        }
        if !(self.partition.alpha > 0.0 && self.partition.alpha.is_finite()) {
            return fail("partition.alpha", "must be finite and > 0");
        }
        if !(self.output.rounds_to_target > 0.0 && self.output.rounds_to_target < 1.0) {
            return fail("output.rounds_to_target", "must lie in (0, 1)");
        }
        if let GateSource::Fixed(t) = &self.fed.gate {
            if t.len() != d.num_classes {
                return fail("fed.gate", "fixed thresholds must have one entry per class");
            }
        }
        self.fed_config(self.seeds[0]).validate()
    }

    pub fn fed_config(&self, seed: u64) -> FedConfig {
        FedConfig {
            n_clients: self.partition.n_clients,
            participation_fraction: self.fed.participation_fraction,
            rounds: self.fed.rounds,
            local_epochs: self.fed.local_epochs,
            batch_size: self.fed.batch_size,
            learning_rate: self.fed.learning_rate,
            method: self.fed.method,
            model: self.model,
            sgb: self.sgb,
            warmup_rounds: self.fed.warmup_rounds,
            gate: self.fed.gate.clone(),
            tau: self.fed.tau,
            master_seed: seed,
            parallel: self.fed.parallel,
            trace: self.output.trace,
        }
    }

    /// Apply `section.key=value` overrides. Values are parsed as TOML
    /// literals, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self)?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::config(raw, "override must look like section.key=value"))?;
            let key = key.trim();
            let value = parse_literal(value.trim());
            let mut path: Vec<&str> = key.split('.').collect();
            let leaf = path.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config(key, "empty key"))?;
            let mut node = &mut root;
            for part in path {
                node = node
                    .as_table_mut()
                    .and_then(|t| t.get_mut(part))
                    .ok_or_else(|| Error::config(key, format!("no section `{part}`")))?;
            }
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::config(key, "parent is not a section"))?;
            table.insert(leaf.to_string(), value);
        }
        let text = toml::to_string(&root)?;
        let config: Self = toml::from_str(&text).map_err(|e| Error::config("overrides", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Dataset, balanced test set, and client shards for one seed.
pub struct SeedSetup {
    pub dataset: GlobalDataset,
    pub test: Vec<Sample>,
    pub shards: Vec<ClientShard>,
}

pub fn build_setup(config: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    let d = &config.dataset;
    let counts = data::make_longtailed_counts(d.num_classes, d.n_max, d.imbalance)?;
    let (dataset, test) = data::synthesize_dataset(
        d.dim,
        &counts,
        d.class_separation,
        d.noise_std,
        d.test_per_class,
        seed,
    )?;
    let shards = data::partition_dirichlet(&dataset, config.partition.n_clients, config.partition.alpha, seed)?;
    Ok(SeedSetup { dataset, test, shards })
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(SeedSetup, ExperimentOutcome)> {
    let setup = build_setup(config, seed)?;
    let outcome = fed::run_experiment(&config.fed_config(seed), &setup.dataset, &setup.test, &setup.shards)?;
    Ok((setup, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub acc_all: f64,
    pub acc_many: Option<f64>,
    pub acc_med: Option<f64>,
    pub acc_few: Option<f64>,
    pub prior_l2: f64,
    pub tail_id_acc: f64,
}

impl From<&RoundMetrics> for FinalMetrics {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            acc_all: m.acc_all,
            acc_many: m.acc_many,
            acc_med: m.acc_med,
            acc_few: m.acc_few,
            prior_l2: m.prior_l2,
            tail_id_acc: m.tail_id_acc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundsToTarget {
    pub target: f64,
    pub round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauNormSummary {
    #[serde(flatten)]
    pub outcome: TauNormOutcome,
    /// `after.few - before.few`.
    pub acc_few_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub method: Method,
    pub rounds_completed: usize,
    pub counts: Vec<usize>,
    pub groups: ClassGroups,
    pub empty_clients: Vec<usize>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub rounds_to_target: RoundsToTarget,
    pub tau_norm: Option<TauNormSummary>,
    pub config: ExperimentConfig,
}

pub fn summarize(
    config: &ExperimentConfig,
    seed: u64,
    setup: &SeedSetup,
    outcome: &ExperimentOutcome,
) -> SeedSummary {
    let tau_norm = outcome.tau_norm.map(|t| TauNormSummary {
        outcome: t,
        acc_few_change: t.after.few.zip(t.before.few).map(|(a, b)| a - b),
    });
    SeedSummary {
        seed,
        method: config.fed.method,
        rounds_completed: outcome.rounds.len(),
        counts: setup.dataset.counts.as_slice().to_vec(),
        groups: outcome.groups.clone(),
        empty_clients: setup
            .shards
            .iter()
            .filter(|s| s.flagged_empty)
            .map(|s| s.client_id)
            .collect(),
        final_metrics: outcome.final_metrics().into(),
        rounds_to_target: RoundsToTarget {
            target: config.output.rounds_to_target,
            round: metrics::rounds_to_target(&outcome.acc_few_history(), config.output.rounds_to_target),
        },
        tau_norm,
        config: config.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub acc_all: MeanStd,
    pub acc_many: Option<MeanStd>,
    pub acc_med: Option<MeanStd>,
    pub acc_few: Option<MeanStd>,
    pub prior_l2: MeanStd,
    pub tail_id_acc: MeanStd,
    pub tau_norm_acc_few: Option<MeanStd>,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    metrics::column_statistics(&rows)[0]
}

fn mean_std_opt(values: impl Iterator<Item = Option<f64>>) -> Option<MeanStd> {
    let vals: Option<Vec<f64>> = values.collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean_std(&v))
}

pub fn aggregate(summaries: &[SeedSummary]) -> Option<Aggregate> {
    if summaries.is_empty() {
        return None;
    }
    let f = |sel: fn(&FinalMetrics) -> f64| {
        mean_std(&summaries.iter().map(|s| sel(&s.final_metrics)).collect::<Vec<_>>())
    };
    Some(Aggregate {
        seeds: summaries.iter().map(|s| s.seed).collect(),
        acc_all: f(|m| m.acc_all),
        acc_many: mean_std_opt(summaries.iter().map(|s| s.final_metrics.acc_many)),
        acc_med: mean_std_opt(summaries.iter().map(|s| s.final_metrics.acc_med)),
        acc_few: mean_std_opt(summaries.iter().map(|s| s.final_metrics.acc_few)),
        prior_l2: f(|m| m.prior_l2),
        tail_id_acc: f(|m| m.tail_id_acc),
        tau_norm_acc_few: mean_std_opt(
            summaries
                .iter()
                .map(|s| s.tau_norm.as_ref().and_then(|t| t.outcome.after.few)),
        ),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Run one seed and write its files into `dir`. Rounds are streamed to
/// `rounds.csv` as they finish; on failure a `FAILED` marker is written and
/// the rows produced so far are kept.
pub fn run_seed_to_dir(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let marker = dir.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = (|| {
        let setup = build_setup(config, seed)?;
        let csv_path = dir.join("rounds.csv");
        let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut csv = BufWriter::new(file);
        writeln!(csv, "{}", metrics::ROUNDS_CSV_HEADER).map_err(|e| Error::io(&csv_path, e))?;
        let mut io_err = None;
        let outcome = fed::run_experiment_with(
            &config.fed_config(seed),
            &setup.dataset,
            &setup.test,
            &setup.shards,
            |rec| {
                let res = writeln!(csv, "{}", metrics::rounds_csv_row(rec.round, &rec.metrics))
                    .and_then(|_| csv.flush());
                if let Err(e) = res {
                    io_err.get_or_insert(e);
                }
            },
        );
        csv.flush().map_err(|e| Error::io(&csv_path, e))?;
        if let Some(e) = io_err {
            return Err(Error::io(&csv_path, e));
        }
        let outcome = outcome?;
        if config.output.trace {
            let mut text = String::from(fed::SGB_TRACE_HEADER);
            text.push('\n');
            for row in &outcome.trace {
                text.push_str(&row.csv());
                text.push('\n');
            }
            write_file(&dir.join("sgb_trace.csv"), &text)?;
        }
        let summary = summarize(config, seed, &setup, &outcome);
        write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
        Ok(summary)
    })();
    if let Err(e) = &result {
        write_file(&marker, &format!("{e}\n"))?;
    }
    result
}

pub struct RunReport {
    pub summaries: Vec<SeedSummary>,
    pub failures: Vec<(u64, Error)>,
}

/// Every seed into `<output.directory>/<seed>/`, then `aggregate.json`.
pub fn run_config(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let out = &config.output.directory;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        match run_seed_to_dir(config, seed, &out.join(seed.to_string())) {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push((seed, e)),
        }
    }
    if let Some(agg) = aggregate(&summaries) {
        write_file(&out.join("aggregate.json"), &serde_json::to_string_pretty(&agg)?)?;
    }
    Ok(RunReport { summaries, failures })
}

/// One configuration within a preset, described by overrides on the base.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub base: ExperimentConfig,
    pub variants: Vec<Variant>,
}

impl Preset {
    /// Concrete configs, one per variant, each writing under `out/<label>`.
    pub fn configs(&self, out: &Path) -> Result<Vec<(String, ExperimentConfig)>> {
        self.variants
            .iter()
            .map(|v| {
                let mut cfg = self.base.with_overrides(&v.overrides)?;
                cfg.output.directory = out.join(&v.label);
                Ok((v.label.clone(), cfg))
            })
            .collect()
    }
}

pub const PRESET_NAMES: [&str; 9] = [
    "delta-alignment",
    "tail-id",
    "global-vs-local-prior",
    "mounting",
    "target-sweep",
    "gain-sweep",
    "if-sweep",
    "headline",
    "rounds-to-target",
];

fn variant(label: impl Into<String>, overrides: &[&str]) -> Variant {
    Variant {
        label: label.into(),
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
    }
}

fn methods() -> Vec<Variant> {
    vec![
        variant("fed_grab", &["fed.method=\"fed_grab\""]),
        variant("fedavg", &["fed.method=\"fedavg\""]),
    ]
}

pub fn preset(name: &str) -> Result<Preset> {
    let base = ExperimentConfig::default();
    let m = base.dataset.num_classes;
    let (description, base, variants) = match name {
        "delta-alignment" => (
            "cross-client mean and std of the per-class gradient difference",
            ExperimentConfig {
                output: OutputConfig {
                    trace: true,
                    ..base.output.clone()
                },
                ..base
            },
            methods(),
        ),
        "tail-id" => (
            "tail identification accuracy and prior distance of the weight-norm prior under plain averaging",
            ExperimentConfig {
                fed: FedSection {
                    method: Method::Fedavg,
                    rounds: 400,
                    ..base.fed.clone()
                },
                ..base
            },
            [10, 50, 100]
                .iter()
                .map(|v| variant(format!("if{v}"), &[&format!("dataset.imbalance={v}.0")]))
                .collect(),
        ),
        "global-vs-local-prior" => (
            "gating on the global weight-norm prior versus each client's local distribution",
            base,
            vec![
                variant("global", &["fed.gate=\"dpa\""]),
                variant("local", &["fed.gate=\"local_counts\""]),
            ],
        ),
        "mounting" => {
            let tail_only: Vec<String> = (0..m)
                .map(|c| if c >= m - 3 { "0.0" } else { "1.0" }.to_string())
                .collect();
            let tail_only = format!("fed.gate={{ fixed = [{}] }}", tail_only.join(", "));
            let all = format!("fed.gate={{ fixed = [{}] }}", vec!["0.0"; m].join(", "));
            (
                "balancer mounted on all classes with the prior, on all without it, or on the tail only",
                base,
                vec![
                    variant("all-with-prior", &["fed.gate=\"dpa\""]),
                    variant("all-without-prior", &[all.as_str()]),
                    variant("tail-only", &[tail_only.as_str()]),
                    variant("none", &["fed.method=\"fedavg\""]),
                ],
            )
        }
        "target-sweep" => (
            "static controller setpoints",
            base,
            [0.0, -1.0, -5.0, -10.0]
                .iter()
                .map(|t| variant(format!("target{t}"), &[&format!("sgb.target={t:?}")]))
                .collect(),
        ),
        "gain-sweep" => (
            "four PID gain triples",
            ExperimentConfig {
                output: OutputConfig {
                    trace: true,
                    ..base.output.clone()
                },
                ..base
            },
            [(1.0, 0.0, 0.0), (10.0, 0.0, 0.0), (10.0, 0.0, 0.1), (10.0, 0.01, 0.1)]
                .iter()
                .map(|(p, i, d)| {
                    variant(
                        format!("kp{p}-ki{i}-kd{d}"),
                        &[&format!("sgb.kp={p:?}"), &format!("sgb.ki={i:?}"), &format!("sgb.kd={d:?}")],
                    )
                })
                .collect(),
        ),
        "if-sweep" => (
            "global imbalance factors from 5 to 50",
            base,
            [5, 10, 20, 50]
                .iter()
                .flat_map(|v| {
                    methods().into_iter().map(move |mv| {
                        let mut o = mv.overrides.clone();
                        o.push(format!("dataset.imbalance={v}.0"));
                        Variant {
                            label: format!("if{v}-{}", mv.label),
                            overrides: o,
                        }
                    })
                })
                .collect(),
        ),
        "headline" => (
            "grouped accuracy of the balancer, plain averaging, and post-hoc tau normalization",
            ExperimentConfig {
                seeds: vec![1, 2, 3, 4, 5],
                ..base
            },
            {
                let mut v = methods();
                v.push(variant("fedavg_then_tau_norm", &["fed.method=\"fedavg_then_tau_norm\""]));
                v
            },
        ),
        "rounds-to-target" => (
            "rounds until tail accuracy first reaches the target",
            ExperimentConfig {
                fed: FedSection {
                    rounds: 200,
                    ..base.fed.clone()
                },
                ..base
            },
            methods(),
        ),
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(Preset {
        name: PRESET_NAMES.iter().find(|n| **n == name).copied().unwrap_or("custom"),
        description,
        base,
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn overrides_take_precedence() {
        let c = ExperimentConfig::default()
            .with_overrides(&["fed.method=fedavg", "sgb.kp=2.5", "dataset.imbalance=10.0"])
            .unwrap();
        assert_eq!(c.fed.method, Method::Fedavg);
        assert_eq!(c.sgb.kp, 2.5);
        assert_eq!(c.dataset.imbalance, 10.0);
    }

    #[test]
    fn override_errors_name_the_field() {
        let c = ExperimentConfig::default();
        assert!(c.with_overrides(&["nosuch.key=1"]).is_err());
        assert!(c.with_overrides(&["fed.method"]).is_err());
        match c.with_overrides(&["fed.participation_fraction=0.0"]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "fed.participation_fraction"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected_with_field() {
        let mut c = ExperimentConfig::default();
        c.seeds.clear();
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "seeds"));
        let mut c = ExperimentConfig::default();
        c.dataset.n_max = 10;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "dataset.n_max"));
        let mut c = ExperimentConfig::default();
        c.fed.gate = GateSource::Fixed(vec![0.0; 3]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::default().to_toml().unwrap();
        text = text.replace("[partition]", "[partition]\nbogus = 3");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            p.base.validate().unwrap();
            let cfgs = p.configs(Path::new("/tmp/x")).unwrap();
            assert!(!cfgs.is_empty(), "{name}");
        }
    }

    #[test]
    fn if_sweep_grid() {
        let p = preset("if-sweep").unwrap();
        let mut ifs: Vec<f64> = p
            .configs(Path::new("o"))
            .unwrap()
            .iter()
            .map(|(_, c)| c.dataset.imbalance)
            .collect();
        ifs.dedup();
        assert_eq!(ifs, vec![5.0, 10.0, 20.0, 50.0]);
    }

    #[test]
    fn gain_sweep_triples() {
        let p = preset("gain-sweep").unwrap();
        let gains: Vec<(f64, f64, f64)> = p
            .configs(Path::new("o"))
            .unwrap()
            .iter()
            .map(|(_, c)| (c.sgb.kp, c.sgb.ki, c.sgb.kd))
            .collect();
        assert_eq!(
            gains,
            vec![(1.0, 0.0, 0.0), (10.0, 0.0, 0.0), (10.0, 0.0, 0.1), (10.0, 0.01, 0.1)]
        );
    }

    #[test]
    fn mounting_tail_only_gate() {
        let p = preset("mounting").unwrap();
        let cfgs = p.configs(Path::new("o")).unwrap();
        let (_, tail) = cfgs.iter().find(|(l, _)| l == "tail-only").unwrap();
        let GateSource::Fixed(t) = &tail.fed.gate else {
            panic!("expected fixed gate")
        };
        assert_eq!(t.iter().filter(|&&v| v == 0.0).count(), 3);
        assert_eq!(&t[7..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        match preset("nope") {
            Err(Error::UnknownPreset { valid, .. }) => assert!(valid.contains("if-sweep")),
            other => panic!("{other:?}"),
        }
    }
}
