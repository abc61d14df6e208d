//! Scenario files. Errors point at the offending line where one can be found.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ctrlserver::{validate_command, ControlCommand, IssueRequest, ServerConfig};
use crate::envsim::{EnvError, EnvParams, EnvState};
use crate::fieldctl::{ControlPlan, PumpPolicy, Schedule, ScheduleEntry, SprayCycle};
use crate::fieldnet::{ChannelParams, ScheduledFault};
use crate::gateway::DEFAULT_HISTORY_CAPACITY;
use crate::sensor::SensorKind;
use crate::xducer::{AdcSpec, ChainRegistry, SignalChain};

pub const BUILTIN_SCENARIOS: [(&str, &str); 3] = [
    ("default", include_str!("../scenarios/default.toml")),
    ("table1_scenario", include_str!("../scenarios/table1_scenario.toml")),
    ("table2_scenario", include_str!("../scenarios/table2_scenario.toml")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source, line, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    pub sample_period_s: u64,
    pub test_period_s: u64,
    pub sync_period_s: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { sample_period_s: 300, test_period_s: 900, sync_period_s: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub history_capacity: usize,
    /// Unsent snapshots kept while the upstream link is down.
    pub outbox_bound: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { history_capacity: DEFAULT_HISTORY_CAPACITY, outbox_bound: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub bind: String,
    pub port: u16,
    /// TOML file of `[[users]] name, hash` entries.
    pub credentials: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub log_path: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    pub accel: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            credentials: None,
            data_dir: PathBuf::from("fieldlink-data"),
            log_path: None,
            accel: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub policy: PumpPolicy,
    pub schedule: Vec<ScheduleEntry>,
    pub spray: Option<SprayCycle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub chain: Option<String>,
    pub params: toml::Table,
    /// Additive noise at the conditioning output, volts.
    pub noise_sigma: f64,
    /// Self-test tolerance as a fraction of the sensor band.
    pub epsilon_frac: f64,
    pub faults: Vec<ScheduledFault>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { chain: None, params: toml::Table::new(), noise_sigma: 0.001, epsilon_frac: 0.02, faults: Vec::new() }
    }
}

/// Command issued by the scenario itself at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedCommand {
    pub at_s: f64,
    pub device: String,
    pub command: ControlCommand,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub sensor: Option<String>,
}

impl ScriptedCommand {
    pub fn request(&self) -> IssueRequest {
        IssueRequest {
            device: self.device.clone(),
            command: self.command,
            duration_s: self.duration_s,
            sensor: self.sensor.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkPath {
    /// Gateway to control server.
    Upstream,
    /// Gateway to field controller.
    Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub path: LinkPath,
    pub from_s: f64,
    pub to_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub outages: Vec<Outage>,
}

impl LinkConfig {
    pub fn up(&self, path: LinkPath, t: f64) -> bool {
        !self.outages.iter().any(|o| o.path == path && t >= o.from_s && t < o.to_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_s: Option<f64>,
    pub timing: Timing,
    pub env: EnvParams,
    pub initial: EnvState,
    pub adc: AdcSpec,
    pub channel: ChannelParams,
    pub gateway: GatewayConfig,
    pub server: ServerConfig,
    pub serve: ServeConfig,
    pub control: ControlConfig,
    pub sensors: BTreeMap<String, SensorConfig>,
    pub commands: Vec<ScriptedCommand>,
    pub link: LinkConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "unnamed".into(),
            seed: 1,
            duration_s: None,
            timing: Timing::default(),
            env: EnvParams::default(),
            initial: EnvState::default(),
            adc: AdcSpec::default(),
            channel: ChannelParams::default(),
            gateway: GatewayConfig::default(),
            server: ServerConfig::default(),
            serve: ServeConfig::default(),
            control: ControlConfig::default(),
            sensors: BTreeMap::new(),
            commands: Vec::new(),
            link: LinkConfig::default(),
        }
    }
}

/// 1-based line of `key = ...`, looked up inside `[section]` when given.
pub fn locate_key(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut in_section = section.is_none();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            let header = trimmed.trim_matches(|c| c == '[' || c == ']').trim();
            in_section = section.is_some_and(|s| header == s);
            continue;
        }
        if in_section {
            if let Some((k, _)) = trimmed.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_of(text: &str, byte: usize) -> usize {
    text.as_bytes()[..byte.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

fn locate_header(text: &str, header: &str) -> Option<usize> {
    text.lines().position(|l| l.trim().trim_matches(|c| c == '[' || c == ']').trim() == header).map(|i| i + 1)
}

/// A validated scenario plus what is derived from it.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub source: String,
    pub text: String,
    pub chains: BTreeMap<SensorKind, Arc<dyn SignalChain>>,
}

impl LoadedScenario {
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    pub fn control_plan(&self) -> ControlPlan {
        ControlPlan {
            schedule: Schedule { entries: self.scenario.control.schedule.clone(), day_length: self.scenario.env.day_length },
            spray: self.scenario.control.spray,
            policy: self.scenario.control.policy,
        }
    }

    pub fn sensor(&self, kind: SensorKind) -> SensorConfig {
        self.scenario.sensors.get(kind.as_str()).cloned().unwrap_or_default()
    }
}

impl Scenario {
    /// Parse and validate scenario text. `source` names it in diagnostics.
    pub fn parse(text: &str, source: &str) -> Result<LoadedScenario, ConfigError> {
        let err = |line: Option<usize>, message: String| ConfigError { source: source.to_string(), line, message };
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            let message = e.message().to_string();
            err(line, message)
        })?;

        if let Err(e) = scenario.env.validate() {
            let line = match &e {
                EnvError::Config { field, .. } => locate_key(text, Some("env"), field),
                _ => locate_header(text, "env"),
            };
            return Err(err(line, e.to_string()));
        }
        if let Err(e) = scenario.initial.check(&scenario.env) {
            return Err(err(locate_header(text, "initial"), e.to_string()));
        }
        if let Err(e) = scenario.adc.validate() {
            return Err(err(locate_header(text, "adc"), e.to_string()));
        }
        if let Err(e) = scenario.channel.validate() {
            return Err(err(locate_header(text, "channel"), e.to_string()));
        }
        let t = &scenario.timing;
        for (key, v) in
            [("sample_period_s", t.sample_period_s), ("test_period_s", t.test_period_s), ("sync_period_s", t.sync_period_s)]
        {
            if v == 0 {
                return Err(err(locate_key(text, Some("timing"), key), format!("{key} must be a positive integer")));
            }
        }
        let dt = scenario.env.dt;
        if dt.fract() != 0.0 || dt < 1.0 {
            return Err(err(locate_key(text, Some("env"), "dt"), format!("env.dt must be a whole number of seconds, got {dt}")));
        }
        if let Some(d) = scenario.duration_s {
            if !(d > 0.0) {
                return Err(err(locate_key(text, None, "duration_s"), "duration_s must be > 0".into()));
            }
        }
        if scenario.gateway.history_capacity == 0 {
            return Err(err(locate_key(text, Some("gateway"), "history_capacity"), "history_capacity must be > 0".into()));
        }
        if !(scenario.serve.accel > 0.0) {
            return Err(err(locate_key(text, Some("serve"), "accel"), "accel must be > 0".into()));
        }
        let plan = Schedule { entries: scenario.control.schedule.clone(), day_length: scenario.env.day_length };
        if let Err(e) = plan.validate() {
            return Err(err(locate_header(text, "control.schedule"), e.to_string()));
        }
        if let Some(spray) = &scenario.control.spray {
            if let Err(e) = spray.validate() {
                return Err(err(locate_header(text, "control.spray"), e.to_string()));
            }
        }

        let registry = ChainRegistry::builtin();
        let mut chains = BTreeMap::new();
        for key in scenario.sensors.keys() {
            if key.parse::<SensorKind>().map(|k| k.as_str() != key).unwrap_or(true) {
                return Err(err(locate_header(text, &format!("sensors.{key}")), format!("unknown sensor `{key}`")));
            }
        }
        for kind in SensorKind::ALL {
            let cfg = scenario.sensors.get(kind.as_str()).cloned().unwrap_or_default();
            let header = format!("sensors.{}", kind.as_str());
            let name = cfg.chain.as_deref().unwrap_or(ChainRegistry::default_chain_name(kind));
            let chain = registry
                .build(name, kind, &cfg.params)
                .map_err(|e| err(locate_header(text, &header).or(locate_header(text, &format!("{header}.params"))), e.to_string()))?;
            if !(cfg.noise_sigma >= 0.0) || !(cfg.epsilon_frac > 0.0) {
                return Err(err(locate_header(text, &header), "noise_sigma must be >= 0 and epsilon_frac > 0".into()));
            }
            chains.insert(kind, chain);
        }
        for (i, c) in scenario.commands.iter().enumerate() {
            let line = text
                .match_indices("[[commands]]")
                .nth(i)
                .map(|(pos, _)| line_of(text, pos));
            if !(c.at_s >= 0.0) {
                return Err(err(line, "at_s must be >= 0".into()));
            }
            validate_command(&c.request()).map_err(|e| err(line, e.to_string()))?;
        }
        for o in &scenario.link.outages {
            if !(o.from_s <= o.to_s) {
                return Err(err(locate_header(text, "link"), "outage needs from_s <= to_s".into()));
            }
        }
        Ok(LoadedScenario { scenario, source: source.to_string(), text: text.to_string(), chains })
    }

    pub fn builtin(name: &str) -> Option<&'static str> {
        BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }

    /// Load a file, or a built-in scenario by name when no such file exists.
    pub fn load(path: &Path) -> Result<LoadedScenario, ConfigError> {
        let source = path.display().to_string();
        match std::fs::read_to_string(path) {
            Ok(text) => Scenario::parse(&text, &source),
            Err(e) => match path.to_str().and_then(Scenario::builtin) {
                Some(text) => Scenario::parse(text, &source),
                None => Err(ConfigError { source, line: None, message: e.to_string() }),
            },
        }
    }
}
