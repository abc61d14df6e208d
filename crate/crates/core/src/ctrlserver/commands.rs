//! Control-window devices, commands and the command ledger state machine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fieldctl::{Actuator, FieldAction, FieldCommand};
use crate::sensor::SensorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    DeepWellPump,
    LakePump,
    FwgsWaterFeed,
    FwgsDrugFeed,
    StandbySelector,
}

impl Device {
    pub const ALL: [Device; 5] =
        [Device::DeepWellPump, Device::LakePump, Device::FwgsWaterFeed, Device::FwgsDrugFeed, Device::StandbySelector];

    pub fn as_str(self) -> &'static str {
        match self {
            Device::DeepWellPump => "deep_well_pump",
            Device::LakePump => "lake_pump",
            Device::FwgsWaterFeed => "fwgs_water_feed",
            Device::FwgsDrugFeed => "fwgs_drug_feed",
            Device::StandbySelector => "standby_selector",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Device::DeepWellPump => "Deep well pump",
            Device::LakePump => "Pump from lake",
            Device::FwgsWaterFeed => "FWGS from pump or lake",
            Device::FwgsDrugFeed => "FWGS from Drug Solution",
            Device::StandbySelector => "Standby Transducer/ Select",
        }
    }

    pub fn actuator(self) -> Option<Actuator> {
        match self {
            Device::DeepWellPump => Some(Actuator::DeepWellPump),
            Device::LakePump => Some(Actuator::LakePump),
            Device::FwgsWaterFeed => Some(Actuator::FwgsWaterValve),
            Device::FwgsDrugFeed => Some(Actuator::FwgsDrugValve),
            Device::StandbySelector => None,
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Device {
    type Err = CommandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Device::ALL
            .into_iter()
            .find(|d| d.as_str() == key || d.display_name().to_ascii_lowercase() == key)
            .ok_or_else(|| CommandError::UnknownDevice(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlCommand {
    #[serde(rename = "ON")]
    On,
    #[serde(rename = "OFF")]
    Off,
    #[serde(rename = "ConnectStandby")]
    ConnectStandby,
    #[serde(rename = "NoChange")]
    NoChange,
}

impl ControlCommand {
    pub fn label(self) -> &'static str {
        match self {
            ControlCommand::On => "ON",
            ControlCommand::Off => "OFF",
            ControlCommand::ConnectStandby => "ConnectStandby",
            ControlCommand::NoChange => "NoChange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandState {
    Pending,
    Dispatched,
    Acked,
    Completed,
    Expired,
}

impl CommandState {
    pub fn is_terminal(self) -> bool {
        matches!(self, CommandState::Completed | CommandState::Expired)
    }

    /// Allowed ledger moves. Commands that never reach the field may expire
    /// from Pending or Dispatched.
    pub fn can_move_to(self, next: CommandState) -> bool {
        use CommandState::*;
        matches!(
            (self, next),
            (Pending, Dispatched) | (Dispatched, Acked) | (Acked, Completed) | (Acked, Expired) | (Pending, Expired) | (Dispatched, Expired)
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommandError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("{0}")]
    Validation(String),
    #[error("no command with id {0}")]
    UnknownCommand(u64),
}

/// Body of an issue request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssueRequest {
    pub device: String,
    pub command: ControlCommand,
    #[serde(default)]
    pub duration_s: Option<f64>,
    /// Sensor to switch to its standby unit; selector only.
    #[serde(default)]
    pub sensor: Option<String>,
}

/// A request that passed validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidCommand {
    pub device: Device,
    pub command: ControlCommand,
    pub duration_s: Option<f64>,
    pub sensor: Option<SensorKind>,
}

pub fn validate_command(req: &IssueRequest) -> Result<ValidCommand, CommandError> {
    let device: Device = req.device.parse()?;
    let invalid = |m: &str| Err(CommandError::Validation(m.to_string()));
    match req.duration_s {
        Some(d) if !(d.is_finite() && d > 0.0) => return invalid("duration_s must be a positive number of seconds"),
        _ => {}
    }
    let needs_duration = matches!(req.command, ControlCommand::On | ControlCommand::ConnectStandby);
    if needs_duration && req.duration_s.is_none() {
        return invalid("duration_s is required for ON and ConnectStandby");
    }
    if !needs_duration && req.duration_s.is_some() {
        return invalid("duration_s must be absent for OFF and NoChange");
    }
    if req.command == ControlCommand::NoChange {
        return invalid("NoChange issues nothing");
    }
    let sensor = match (device, req.command) {
        (Device::StandbySelector, ControlCommand::ConnectStandby) => {
            let Some(name) = &req.sensor else {
                return invalid("ConnectStandby needs a sensor");
            };
            Some(name.parse::<SensorKind>().map_err(|e| CommandError::Validation(e.to_string()))?)
        }
        (Device::StandbySelector, _) => return invalid("the standby selector only accepts ConnectStandby"),
        (_, ControlCommand::ConnectStandby) => return invalid("ConnectStandby applies to the standby selector only"),
        _ => {
            if req.sensor.is_some() {
                return invalid("sensor applies to the standby selector only");
            }
            None
        }
    };
    Ok(ValidCommand { device, command: req.command, duration_s: req.duration_s, sensor })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: CommandState,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEnvelope {
    pub command_id: u64,
    pub issued_by: String,
    pub issued_at: f64,
    pub device: Device,
    pub command: ControlCommand,
    pub duration_s: Option<f64>,
    pub sensor: Option<SensorKind>,
    pub state: CommandState,
    pub history: Vec<Transition>,
    pub reason: Option<String>,
}

impl CommandEnvelope {
    pub fn new(command_id: u64, issued_by: &str, issued_at: f64, cmd: ValidCommand) -> Self {
        CommandEnvelope {
            command_id,
            issued_by: issued_by.to_string(),
            issued_at,
            device: cmd.device,
            command: cmd.command,
            duration_s: cmd.duration_s,
            sensor: cmd.sensor,
            state: CommandState::Pending,
            history: vec![Transition { state: CommandState::Pending, at: issued_at }],
            reason: None,
        }
    }

    /// Returns false, leaving the envelope unchanged, for a disallowed move.
    pub fn advance(&mut self, next: CommandState, at: f64, reason: Option<String>) -> bool {
        if !self.state.can_move_to(next) {
            return false;
        }
        self.state = next;
        self.history.push(Transition { state: next, at });
        if reason.is_some() {
            self.reason = reason;
        }
        true
    }

    pub fn state_entered_at(&self, state: CommandState) -> Option<f64> {
        self.history.iter().find(|t| t.state == state).map(|t| t.at)
    }

    pub fn to_field(&self) -> FieldCommand {
        let action = match (self.device.actuator(), self.sensor) {
            (Some(actuator), _) => FieldAction::SetRelay {
                actuator: actuator.as_str().to_string(),
                bit: self.command == ControlCommand::On,
                duration_s: self.duration_s,
            },
            (None, sensor) => FieldAction::ConnectStandby {
                sensor: sensor.map(|s| s.as_str().to_string()).unwrap_or_default(),
            },
        };
        FieldCommand { command_id: self.command_id, action }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(device: &str, command: ControlCommand, duration_s: Option<f64>) -> IssueRequest {
        IssueRequest { device: device.into(), command, duration_s, sensor: None }
    }

    #[test]
    fn duration_rules() {
        assert!(validate_command(&req("lake_pump", ControlCommand::On, Some(30.0))).is_ok());
        assert!(validate_command(&req("lake_pump", ControlCommand::On, None)).is_err());
        assert!(validate_command(&req("lake_pump", ControlCommand::Off, Some(5.0))).is_err());
        assert!(validate_command(&req("lake_pump", ControlCommand::Off, None)).is_ok());
        assert!(validate_command(&req("lake_pump", ControlCommand::On, Some(-1.0))).is_err());
        assert!(validate_command(&req("lake_pump", ControlCommand::NoChange, None)).is_err());
        assert!(matches!(
            validate_command(&req("sprinkler", ControlCommand::Off, None)),
            Err(CommandError::UnknownDevice(_))
        ));
    }

    #[test]
    fn standby_needs_sensor() {
        let mut r = req("standby_selector", ControlCommand::ConnectStandby, Some(1000.0));
        assert!(validate_command(&r).is_err());
        r.sensor = Some("Over head water sensor".into());
        assert_eq!(validate_command(&r).unwrap().sensor, Some(SensorKind::TankLevel));
        assert!(validate_command(&IssueRequest { device: "lake_pump".into(), ..r }).is_err());
    }

    #[test]
    fn display_names_parse() {
        assert_eq!("Pump from lake".parse::<Device>().unwrap(), Device::LakePump);
    }

    #[test]
    fn ledger_moves() {
        use CommandState::*;
        let cmd = validate_command(&req("lake_pump", ControlCommand::On, Some(30.0))).unwrap();
        let mut e = CommandEnvelope::new(1, "m", 0.0, cmd);
        assert!(!e.advance(Completed, 1.0, None));
        assert!(e.advance(Dispatched, 1.0, None));
        assert!(e.advance(Acked, 2.0, None));
        assert!(e.advance(Completed, 32.0, None));
        assert!(!e.advance(Expired, 40.0, None));
        assert_eq!(e.state_entered_at(Acked), Some(2.0));
    }

    #[test]
    fn field_command_shape() {
        let cmd = validate_command(&req("fwgs_water_feed", ControlCommand::On, Some(100.0))).unwrap();
        let f = CommandEnvelope::new(4, "m", 0.0, cmd).to_field();
        assert_eq!(
            f.action,
            FieldAction::SetRelay { actuator: "fwgs_water_valve".into(), bit: true, duration_s: Some(100.0) }
        );
    }
}
