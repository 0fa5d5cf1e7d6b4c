use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedgrab::experiment::{self, ExperimentConfig, RunReport, PRESET_NAMES};

#[derive(Parser)]
#[command(name = "fedgrab", about = "Federated long-tailed learning simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config file.
    Run {
        config: PathBuf,
        /// `section.key=value` overrides, applied in order.
        overrides: Vec<String>,
        /// Shorthand for `fed.method=<METHOD>`; applied last.
        #[arg(long)]
        method: Option<String>,
        /// Override `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every variant of a named preset.
    Preset {
        name: String,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Print the variant configs as TOML instead of running them.
        #[arg(long)]
        dump: bool,
    },
    /// List preset names and what they measure.
    ListPresets,
}

fn report(label: &str, report: &RunReport) -> bool {
    for s in &report.summaries {
        let f = &s.final_metrics;
        let few = f.acc_few.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{label} seed={} acc_all={:.4} acc_few={few} tail_id_acc={:.3}",
            s.seed, f.acc_all, f.tail_id_acc
        );
    }
    for (seed, e) in &report.failures {
        eprintln!("{label} seed={seed} FAILED: {e}");
    }
    report.failures.is_empty()
}

fn run(config: &Path, mut overrides: Vec<String>, method: Option<String>, out: Option<PathBuf>) -> fedgrab::Result<bool> {
    let base = ExperimentConfig::load(config)?;
    if let Some(m) = method {
        overrides.push(format!("fed.method={m}"));
    }
    if let Some(o) = out {
        overrides.push(format!("output.directory={}", o.display()));
    }
    let cfg = base.with_overrides(&overrides)?;
    let rep = experiment::run_config(&cfg)?;
    Ok(report(&cfg.output.directory.display().to_string(), &rep))
}

fn preset(name: &str, out: &Path, dump: bool) -> fedgrab::Result<bool> {
    let p = experiment::preset(name)?;
    let configs = p.configs(out)?;
    if dump {
        let mut out = std::io::stdout().lock();
        for (label, cfg) in &configs {
            if writeln!(out, "# {label}\n{}", cfg.to_toml()?).is_err() {
                break;
            }
        }
        return Ok(true);
    }
    let mut ok = true;
    for (label, cfg) in &configs {
        log::info!("preset {name}: variant {label}");
        let rep = experiment::run_config(cfg)?;
        ok &= report(label, &rep);
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            overrides,
            method,
            out,
        } => run(&config, overrides, method, out),
        Command::Preset { name, out, dump } => preset(&name, &out, dump),
        Command::ListPresets => {
            for name in PRESET_NAMES {
                let desc = experiment::preset(name).map(|p| p.description).unwrap_or("");
                println!("{name:<24}{desc}");
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
