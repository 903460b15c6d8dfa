use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use proxtrust::epidemic::{TraceError, TraceMode, TransmissionMode};
use proxtrust::log::{EventLog, LogError};
use proxtrust::sim::{self, apply_override, parse_value, ConfigError, RunOptions, ScenarioConfig, SimError, TraceInputs};
use proxtrust::DeviceId;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Sim(SimError),
    #[error("{0}")]
    Log(#[from] LogError),
    #[error("{0}")]
    Trace(#[from] TraceError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) | CliError::Sim(SimError::Config(_)) => 2,
            _ => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            other => CliError::Sim(other),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn text(bytes: &[u8]) -> Result<&str, CliError> {
    std::str::from_utf8(bytes).map_err(|_| {
        CliError::Config(ConfigError::Parse {
            line: 1,
            column: 1,
            message: "config is not valid UTF-8".into(),
        })
    })
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn validate(config: &Path, overrides: &[String]) -> Result<(), CliError> {
    let bytes = read(config)?;
    match ScenarioConfig::load(text(&bytes)?, overrides) {
        Ok(_) => {
            println!("OK");
            Ok(())
        }
        Err(ConfigError::Invalid(violations)) => {
            for v in &violations {
                println!("{v}");
            }
            Err(ConfigError::Invalid(violations).into())
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct RunManifest {
    config_hash: String,
    config_path: String,
    overrides: Vec<String>,
    seed: u64,
    version: &'static str,
    start_tick: u64,
    end_tick: u64,
    outputs: Vec<String>,
    trace_note: Option<String>,
}

pub fn run(config: &Path, out: &Path, overrides: &[String]) -> Result<(), CliError> {
    let bytes = read(config)?;
    let cfg = ScenarioConfig::load(text(&bytes)?, overrides)?;
    let hash = config_hash(&bytes);
    let report = sim::run(&cfg, &RunOptions { config_hash: hash.clone() })?;
    let io_err = |source| CliError::Io {
        path: out.to_path_buf(),
        source,
    };
    let outputs = report.write_outputs(out).map_err(io_err)?;
    let manifest = RunManifest {
        config_hash: hash,
        config_path: config.display().to_string(),
        overrides: overrides.to_vec(),
        seed: cfg.seed(),
        version: env!("CARGO_PKG_VERSION"),
        start_tick: 0,
        end_tick: cfg.sim.ticks_total,
        outputs: outputs
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect(),
        trace_note: report.trace_note.clone(),
    };
    let manifest_path = out.join("manifest.json");
    write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;

    let s = report.summary();
    println!(
        "ran {} ticks, seed {}: attack rate {:.3}, trace coverage {:.3}, {} alerts -> {}",
        cfg.sim.ticks_total,
        s.seed,
        s.attack_rate,
        s.coverage_bidirectional,
        report.alerts.len(),
        out.display()
    );
    Ok(())
}

pub fn trace(
    log: &Path,
    index: Option<u64>,
    weighting: Option<TransmissionMode>,
    forward_only: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let bytes = read(log)?;
    let log = EventLog::from_jsonl(&String::from_utf8_lossy(&bytes))?;
    let inputs = TraceInputs::from_log(&log)?;
    let index = match index {
        Some(i) => DeviceId(i),
        None => inputs
            .default_index()
            .ok_or_else(|| CliError::Usage("log has no confirmed adopter; pass --index".into()))?,
    };
    let mode = if forward_only {
        TraceMode::ForwardOnly
    } else {
        TraceMode::Bidirectional
    };
    let report = match inputs.trace(index, mode, weighting) {
        Ok(r) => r,
        Err(TraceError::CycleDetected { at, partial }) => {
            eprintln!("warning: inferred chain revisits {at}; reporting the chain up to there");
            *partial
        }
        Err(e) => return Err(e.into()),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match out {
        Some(p) => write(p, json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    param: String,
    value: String,
    replicate: u64,
    seed: u64,
    attack_rate: f64,
    coverage_bidirectional: f64,
    coverage_forward: f64,
    patient_zero_hit: f64,
}

pub fn sweep(
    config: &Path,
    param: &str,
    values: &[String],
    replicates: u64,
    out: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    if replicates == 0 {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    let bytes = read(config)?;
    let mut base = parse_value(text(&bytes)?)?;
    for o in overrides {
        apply_override(&mut base, o)?;
    }
    let base_seed = ScenarioConfig::load(&base.to_string(), &[])?.seed();

    // Validate every variant up front so a typo fails before any work starts.
    let mut jobs = Vec::new();
    for (v, value) in values.iter().enumerate() {
        let mut tree = base.clone();
        apply_override(&mut tree, &format!("{param}={value}"))?;
        let cfg = ScenarioConfig::load(&tree.to_string(), &[])?;
        for r in 0..replicates {
            let run_index = v as u64 * replicates + r;
            let mut cfg = cfg.clone();
            cfg.sim.seed = Some(base_seed.wrapping_add(run_index));
            jobs.push((value.to_string(), r, cfg));
        }
    }

    let hash = config_hash(&bytes);
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(value, r, cfg)| {
            let report = sim::run(cfg, &RunOptions { config_hash: hash.clone() })?;
            let s = report.summary();
            Ok(SweepRow {
                param: param.to_string(),
                value: value.clone(),
                replicate: *r,
                seed: s.seed,
                attack_rate: s.attack_rate,
                coverage_bidirectional: s.coverage_bidirectional,
                coverage_forward: s.coverage_forward,
                patient_zero_hit: s.patient_zero_hit,
            })
        })
        .collect::<Result<_, CliError>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row).expect("in-memory write");
    }
    let body = w.into_inner().expect("in-memory flush");
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    write(&out.join("sweep.csv"), &body)?;
    print!("{}", String::from_utf8_lossy(&body));
    Ok(())
}
