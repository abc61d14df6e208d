//! Batch runs and analysis dispatch behind the `fieldlink` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fieldlink_core::analysis::{read_history, AnalysisError, AnalysisInput, ModeRegistry, DEMO_CROPS};
use fieldlink_core::config::{ConfigError, LoadedScenario, Scenario};
use fieldlink_core::fieldctl::write_actuation_log;
use fieldlink_core::gateway::HistoryCsv;
use fieldlink_core::plant::{Plant, PlantError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const HISTORY_FILE: &str = "history.csv";
pub const ACTUATION_FILE: &str = "actuation.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
const DEFAULT_DURATION_S: f64 = 86_400.0;
/// Simulated seconds between history flushes.
const CHUNK_S: f64 = 86_400.0;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Analysis(AnalysisError::Config(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config_source: String,
    pub config_sha256: String,
    pub seed: u64,
    pub duration_s: f64,
    pub quantum_s: u64,
    pub history_rows: u64,
    pub history_sha256: String,
    pub actuation_rows: u64,
    pub wall_clock_s: f64,
    /// Resolved scenario text, byte for byte.
    pub config: String,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
    }

    /// The scenario the manifest was produced from.
    pub fn scenario(&self) -> Result<LoadedScenario, CliError> {
        Ok(Scenario::parse(&self.config, &self.config_source)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
    /// Simulated seconds per wall second; `None` runs flat out.
    pub accel: Option<f64>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Run `loaded` to completion and write history, actuation log and
/// manifest into `out_dir`. Files appear only once the run has finished.
pub fn run_scenario(loaded: &LoadedScenario, opts: &RunOptions, out_dir: &Path) -> Result<Manifest, CliError> {
    let mut loaded = loaded.clone();
    if let Some(seed) = opts.seed {
        loaded.scenario.seed = seed;
    }
    let duration = opts.duration_s.or(loaded.scenario.duration_s).unwrap_or(DEFAULT_DURATION_S);
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(CliError::Usage(format!("duration must be > 0, got {duration}")));
    }
    if let Some(a) = opts.accel {
        if !(a > 0.0) {
            return Err(CliError::Usage(format!("accel must be > 0, got {a}")));
        }
    }
    let mut plant = Plant::in_memory(&loaded)?;
    plant.server_mut().set_event_capture(false);
    plant.record_history(true);

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let staging = out_dir.join(format!(".partial-{}", std::process::id()));
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;
    let result = run_into(&mut plant, &loaded, opts, duration, &staging);
    match result {
        Ok(manifest) => {
            for name in [HISTORY_FILE, ACTUATION_FILE, MANIFEST_FILE] {
                let dest = out_dir.join(name);
                fs::rename(staging.join(name), &dest).map_err(io_err(&dest))?;
            }
            let _ = fs::remove_dir_all(&staging);
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn run_into(
    plant: &mut Plant,
    loaded: &LoadedScenario,
    opts: &RunOptions,
    duration: f64,
    dir: &Path,
) -> Result<Manifest, CliError> {
    let started = Instant::now();
    let history_path = dir.join(HISTORY_FILE);
    let file = File::create(&history_path).map_err(io_err(&history_path))?;
    let mut history = HistoryCsv::new(BufWriter::with_capacity(1 << 20, file))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut actuation = Vec::new();
    let mut rows = 0u64;

    let mut t = 0.0;
    while t < duration {
        let next = (t + CHUNK_S).min(duration);
        plant.run_until(next)?;
        for e in plant.take_history() {
            history.write(&e).map_err(|e| CliError::Usage(e.to_string()))?;
            rows += 1;
        }
        actuation.extend(plant.take_actuation());
        if let Some(accel) = opts.accel {
            let due = next / accel;
            let elapsed = started.elapsed().as_secs_f64();
            if due > elapsed {
                std::thread::sleep(std::time::Duration::from_secs_f64(due - elapsed));
            }
        }
        t = next;
    }
    let mut w = history.finish().map_err(|e| CliError::Usage(e.to_string()))?;
    w.flush().map_err(io_err(&history_path))?;
    drop(w);

    let actuation_path = dir.join(ACTUATION_FILE);
    let file = File::create(&actuation_path).map_err(io_err(&actuation_path))?;
    write_actuation_log(BufWriter::new(file), &actuation).map_err(|e| CliError::Usage(e.to_string()))?;

    let manifest = Manifest {
        tool: "fieldlink".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: loaded.scenario.name.clone(),
        config_source: loaded.source.clone(),
        config_sha256: loaded.sha256(),
        seed: loaded.scenario.seed,
        duration_s: duration,
        quantum_s: plant.quantum(),
        history_rows: rows,
        history_sha256: sha256_file(&history_path)?,
        actuation_rows: actuation.len() as u64,
        wall_clock_s: started.elapsed().as_secs_f64(),
        config: loaded.text.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Output path for one analysis file: `<dir>/<stem>_<suffix>`.
pub fn output_path(dir: &Path, stem: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{stem}_{suffix}"))
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub history: Option<PathBuf>,
    pub mode: String,
    pub params: Option<PathBuf>,
    /// Crop rule table path, or `demo` for the bundled one.
    pub rules: Option<String>,
    pub out_dir: Option<PathBuf>,
}

/// Dispatch to an analysis mode and write its outputs. Returns the paths written.
pub fn analyze(opts: &AnalyzeOptions) -> Result<Vec<PathBuf>, CliError> {
    let registry = ModeRegistry::default();
    let mode = registry.get(&opts.mode)?;
    let history = match (&opts.history, mode.needs_history()) {
        (Some(p), true) => {
            let f = File::open(p).map_err(io_err(p))?;
            Some(read_history(f)?)
        }
        (None, true) => return Err(CliError::Usage(format!("mode `{}` needs a history CSV", opts.mode))),
        (_, false) => None,
    };
    let params = match &opts.params {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let rules = match opts.rules.as_deref() {
        None => None,
        Some("demo") => Some(DEMO_CROPS.to_string()),
        Some(p) => Some(fs::read_to_string(p).map_err(io_err(Path::new(p)))?),
    };
    let outputs = mode.run(&AnalysisInput { history, params, rules })?;

    let (dir, stem) = match &opts.history {
        Some(p) => (
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
            p.file_stem().map_or("history".into(), |s| s.to_string_lossy().into_owned()),
        ),
        None => (PathBuf::from("."), "analysis".to_string()),
    };
    let dir = opts.out_dir.clone().unwrap_or(dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut written = Vec::new();
    for out in outputs {
        let path = output_path(&dir, &stem, &out.suffix);
        fs::write(&path, &out.contents).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
