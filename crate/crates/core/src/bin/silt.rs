use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use silt_core::harness::{run, validate, ExperimentConfig, RunError, RunOptions, Severity};
use silt_core::suite::{criteria, format_line, run_criterion, SuiteOptions};

#[derive(Parser)]
#[command(name = "silt", version, about = "Self-intersection local time experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a config, run it and write artifacts.
    Run(Common),
    /// List every diagnostic for a config without running it.
    Validate(Common),
    /// Run the acceptance battery and print a pass/fail table.
    Suite {
        #[command(flatten)]
        common: Common,
        /// Criterion numbers to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    tolerance_scale: Option<f64>,
}

/// Optional config for the `suite` verb; command-line flags take precedence.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    seed: Option<u64>,
    tolerance_scale: Option<f64>,
    #[serde(default)]
    criteria: Vec<u8>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, String> {
        let path = self.config.as_ref().ok_or("--config is required")?;
        let mut cfg = ExperimentConfig::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.tolerance_scale {
            cfg.tolerances.scale = t;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(c) => {
            let cfg = match c.load() {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let diags = validate(&cfg);
            for d in &diags {
                println!("{d}");
            }
            if diags.iter().any(|d| d.severity == Severity::Error) {
                ExitCode::from(2)
            } else {
                println!("config ok (hash {})", cfg.hash());
                ExitCode::SUCCESS
            }
        }
        Command::Run(c) => {
            let cfg = match c.load() {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("silt-out"));
            let opts = RunOptions { workers: c.workers };
            match run(&cfg, &out, &opts) {
                Ok(report) => {
                    for w in &report.warnings {
                        eprintln!("{w}");
                    }
                    for e in &report.errors {
                        eprintln!("task {} failed: {}", e.task, e.error);
                    }
                    for ch in &report.checks {
                        let v = if ch.pass { "PASS" } else { "FAIL" };
                        println!("{v} {} = {:.6e} (tolerance {:.3e})", ch.name, ch.value, ch.tolerance);
                    }
                    println!(
                        "{:?} in {:.1}s, artifacts in {} (hash {})",
                        report.status,
                        report.wall_seconds,
                        report.out_dir.display(),
                        report.config_hash
                    );
                    ExitCode::from(report.status.exit_code() as u8)
                }
                Err(e @ RunError::Invalid(_)) => {
                    eprint!("{e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Suite { common, mut only } => {
            let file = match &common.config {
                None => SuiteFile::default(),
                Some(path) => match std::fs::read_to_string(path).map_err(|e| e.to_string()).and_then(|t| {
                    toml::from_str::<SuiteFile>(&t).map_err(|e| e.to_string())
                }) {
                    Ok(f) => f,
                    Err(e) => {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                },
            };
            let defaults = SuiteOptions::default();
            let opts = SuiteOptions {
                seed: common.seed.or(file.seed).unwrap_or(defaults.seed),
                tolerance_scale: common
                    .tolerance_scale
                    .or(file.tolerance_scale)
                    .unwrap_or(defaults.tolerance_scale),
            };
            if only.is_empty() {
                only = file.criteria;
            }
            if let Some(bad) = only.iter().find(|id| !criteria().iter().any(|c| c.id == **id)) {
                eprintln!("error: no criterion numbered {bad}");
                return ExitCode::from(2);
            }
            if let Some(w) = common.workers {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            let mut outcomes = Vec::new();
            for c in criteria().iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
                let o = run_criterion(c, &opts);
                println!("{}", format_line(&o));
                outcomes.push(o);
            }
            let passed = outcomes.iter().filter(|o| o.pass).count();
            println!("{passed}/{} criteria passed", outcomes.len());
            if let Some(dir) = &common.out {
                let selection = serde_json::json!({ "options": opts, "criteria": only });
                let hash: String = Sha256::digest(selection.to_string().as_bytes())
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect();
                let doc = serde_json::json!({
                    "config_hash": hash,
                    "options": opts,
                    "outcomes": outcomes,
                });
                let write = std::fs::create_dir_all(dir).and_then(|_| {
                    std::fs::write(dir.join("suite.json"), serde_json::to_string_pretty(&doc).expect("serializes") + "\n")
                });
                if let Err(e) = write {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            if passed == outcomes.len() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
    }
}
