//! Site controller: daily schedule, pest-spray cycle, automatic pump choice,
//! and timed remote overrides driving boolean relays.
//!
//! Per tick the bit of every actuator is the override bit when an unexpired
//! override exists, otherwise the schedule layer (schedule entries, spray
//! windows, automatic demand). Two invariants are then repaired: at most one
//! pump runs, and the drug valve only opens with the water valve.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envsim::SECONDS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    DeepWellPump,
    LakePump,
    FwgsWaterValve,
    FwgsDrugValve,
    FeedTap,
}

impl Actuator {
    pub const ALL: [Actuator; 5] = [
        Actuator::DeepWellPump,
        Actuator::LakePump,
        Actuator::FwgsWaterValve,
        Actuator::FwgsDrugValve,
        Actuator::FeedTap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Actuator::DeepWellPump => "deep_well_pump",
            Actuator::LakePump => "lake_pump",
            Actuator::FwgsWaterValve => "fwgs_water_valve",
            Actuator::FwgsDrugValve => "fwgs_drug_valve",
            Actuator::FeedTap => "feed_tap",
        }
    }
}

impl fmt::Display for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Actuator {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Actuator::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| FieldError::UnknownActuator(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("unknown actuator `{0}`")]
    UnknownActuator(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// Relay outputs of the site controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActuatorState {
    pub deep_well_pump: bool,
    pub lake_pump: bool,
    pub fwgs_water_valve: bool,
    pub fwgs_drug_valve: bool,
    pub feed_tap: bool,
}

impl ActuatorState {
    pub fn get(&self, a: Actuator) -> bool {
        match a {
            Actuator::DeepWellPump => self.deep_well_pump,
            Actuator::LakePump => self.lake_pump,
            Actuator::FwgsWaterValve => self.fwgs_water_valve,
            Actuator::FwgsDrugValve => self.fwgs_drug_valve,
            Actuator::FeedTap => self.feed_tap,
        }
    }

    pub fn set(&mut self, a: Actuator, bit: bool) {
        match a {
            Actuator::DeepWellPump => self.deep_well_pump = bit,
            Actuator::LakePump => self.lake_pump = bit,
            Actuator::FwgsWaterValve => self.fwgs_water_valve = bit,
            Actuator::FwgsDrugValve => self.fwgs_drug_valve = bit,
            Actuator::FeedTap => self.feed_tap = bit,
        }
    }

    pub fn invariants_hold(&self) -> bool {
        !(self.deep_well_pump && self.lake_pump) && (!self.fwgs_drug_valve || self.fwgs_water_valve)
    }
}

// ---------------------------------------------------------------------------
// Schedule and spray cycle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    /// Seconds after the day boundary.
    pub start_time_of_day: f64,
    pub duration: f64,
    pub actuator: Actuator,
}

impl ScheduleEntry {
    /// Whether the daily window covers `t`. Windows may wrap past the day end.
    pub fn active(&self, t: f64, day_length: f64) -> bool {
        let tod = t.rem_euclid(day_length);
        let end = self.start_time_of_day + self.duration;
        (tod >= self.start_time_of_day && tod < end) || (end > day_length && tod < end - day_length)
    }

    /// End of the window containing `t`; `t` must be inside it.
    fn window_end(&self, t: f64, day_length: f64) -> f64 {
        let day_start = t - t.rem_euclid(day_length);
        let tod = t - day_start;
        if tod >= self.start_time_of_day {
            day_start + self.start_time_of_day + self.duration
        } else {
            day_start - day_length + self.start_time_of_day + self.duration
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    pub day_length: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { entries: Vec::new(), day_length: SECONDS_PER_DAY }
    }
}

impl Schedule {
    pub fn new(entries: Vec<ScheduleEntry>, day_length: f64) -> Result<Self, FieldError> {
        let schedule = Schedule { entries, day_length };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.day_length > 0.0) {
            return Err(FieldError::Schedule("day length must be > 0".into()));
        }
        for e in &self.entries {
            if !(e.duration > 0.0 && e.duration < self.day_length) {
                return Err(FieldError::Schedule(format!("{}: duration must be in (0, day)", e.actuator)));
            }
            if !(0.0..self.day_length).contains(&e.start_time_of_day) {
                return Err(FieldError::Schedule(format!("{}: start outside the day", e.actuator)));
            }
        }
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                if a.actuator == b.actuator && self.overlap(a, b) {
                    return Err(FieldError::Schedule(format!("overlapping entries for {}", a.actuator)));
                }
            }
        }
        Ok(())
    }

    fn overlap(&self, a: &ScheduleEntry, b: &ScheduleEntry) -> bool {
        let d = self.day_length;
        // compare on a doubled day so wrapped windows are covered
        [0.0, d, -d].iter().any(|shift| {
            let (s1, e1) = (a.start_time_of_day, a.start_time_of_day + a.duration);
            let (s2, e2) = (b.start_time_of_day + shift, b.start_time_of_day + b.duration + shift);
            s1 < e2 && s2 < e1
        })
    }

    pub fn active_entry(&self, actuator: Actuator, t: f64) -> Option<&ScheduleEntry> {
        self.entries.iter().find(|e| e.actuator == actuator && e.active(t, self.day_length))
    }

    pub fn bit(&self, actuator: Actuator, t: f64) -> bool {
        self.active_entry(actuator, t).is_some()
    }
}

/// Periodic pest spraying: water and drug valves open together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SprayCycle {
    pub period_days: u32,
    pub duration_s: f64,
    #[serde(default = "SprayCycle::default_start")]
    pub start_time_of_day: f64,
    #[serde(default)]
    pub first_day: u32,
}

impl SprayCycle {
    fn default_start() -> f64 {
        5.0 * 3600.0
    }

    /// Spray every `period_days` starting on day 0.
    pub fn every(period_days: u32, duration_s: f64) -> Result<Self, FieldError> {
        let cycle = SprayCycle { period_days, duration_s, start_time_of_day: Self::default_start(), first_day: 0 };
        cycle.validate()?;
        Ok(cycle)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.period_days < 1 {
            return Err(FieldError::Schedule("spray period must be at least one day".into()));
        }
        if !(self.duration_s > 0.0 && self.start_time_of_day + self.duration_s <= SECONDS_PER_DAY) {
            return Err(FieldError::Schedule("spray window must fit inside one day".into()));
        }
        Ok(())
    }

    fn window_on(&self, day: u64, day_length: f64) -> Option<(f64, f64)> {
        let first = u64::from(self.first_day);
        if day < first || (day - first) % u64::from(self.period_days) != 0 {
            return None;
        }
        let start = day as f64 * day_length + self.start_time_of_day;
        Some((start, start + self.duration_s))
    }

    /// Spray windows that start within `[0, horizon)`.
    pub fn windows(&self, horizon: f64, day_length: f64) -> Vec<(f64, f64)> {
        let days = (horizon / day_length).ceil() as u64;
        (0..days)
            .filter_map(|d| self.window_on(d, day_length))
            .filter(|(s, _)| *s < horizon)
            .collect()
    }

    pub fn active_window(&self, t: f64, day_length: f64) -> Option<(f64, f64)> {
        if t < 0.0 {
            return None;
        }
        let day = (t / day_length).floor() as u64;
        self.window_on(day, day_length).filter(|(s, e)| t >= *s && t < *e)
    }
}

/// Schedule augmentation for periodic spraying.
pub fn pest_spray_cycle(period_days: u32, duration_s: f64) -> Result<SprayCycle, FieldError> {
    SprayCycle::every(period_days, duration_s)
}

// ---------------------------------------------------------------------------
// Automatic pump selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pump {
    DeepWell,
    Lake,
}

impl Pump {
    pub fn actuator(self) -> Actuator {
        match self {
            Pump::DeepWell => Actuator::DeepWellPump,
            Pump::Lake => Actuator::LakePump,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpPolicy {
    pub moisture_low: f64,
    pub tank_low: f64,
    pub lake_min: f64,
    /// Hours the lake pump may run ahead of the deep well before the deep
    /// well takes over.
    pub balance_margin_h: f64,
    /// Once open, the automatic feed tap stays open until soil moisture
    /// exceeds `moisture_low` by this much.
    pub hysteresis: f64,
    /// Once running, a pump keeps filling until the tank is this far above
    /// `tank_low`.
    pub tank_hysteresis: f64,
    /// Open the feed tap while soil moisture is below `moisture_low`.
    pub auto_feed: bool,
    /// Run the selected pump automatically.
    pub auto_pump: bool,
}

impl Default for PumpPolicy {
    fn default() -> Self {
        PumpPolicy {
            moisture_low: 0.3,
            tank_low: 1.5,
            lake_min: 5.0,
            balance_margin_h: 5.0,
            hysteresis: 0.05,
            tank_hysteresis: 0.5,
            auto_feed: true,
            auto_pump: true,
        }
    }
}

/// Cumulative pump running time, hours.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PumpRuntime {
    pub deep_well_h: f64,
    pub lake_h: f64,
}

pub fn select_pump(moisture: f64, lake_level: f64, tank_level: f64, runtime: PumpRuntime, policy: &PumpPolicy) -> Option<Pump> {
    if moisture >= policy.moisture_low && tank_level >= policy.tank_low {
        return None;
    }
    if lake_level > policy.lake_min {
        if runtime.lake_h - runtime.deep_well_h > policy.balance_margin_h {
            Some(Pump::DeepWell)
        } else {
            Some(Pump::Lake)
        }
    } else {
        Some(Pump::DeepWell)
    }
}

/// Latest site readings the controller acts on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldInputs {
    pub moisture: Option<f64>,
    pub lake_level: Option<f64>,
    pub tank_level: Option<f64>,
    pub runtime: PumpRuntime,
    /// Relay feedback: the pump running at the previous tick.
    #[serde(default)]
    pub running_pump: Option<Pump>,
    /// Relay feedback: the feed tap was open at the previous tick.
    #[serde(default)]
    pub feed_running: bool,
}

// ---------------------------------------------------------------------------
// Overrides and the pure tick
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub command_id: u64,
    pub actuator: Actuator,
    pub bit: bool,
    pub expires_at: f64,
}

impl OverrideRecord {
    pub fn live(&self, t: f64) -> bool {
        t < self.expires_at
    }
}

/// At most one override per actuator; installing replaces the previous one.
pub type Overrides = BTreeMap<Actuator, OverrideRecord>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Cause {
    #[default]
    Idle,
    Schedule,
    Spray,
    Auto,
    Override(u64),
    Repair,
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cause::Idle => f.write_str("idle"),
            Cause::Schedule => f.write_str("schedule"),
            Cause::Spray => f.write_str("spray"),
            Cause::Auto => f.write_str("auto"),
            Cause::Override(id) => write!(f, "override:{id}"),
            Cause::Repair => f.write_str("repair"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub state: ActuatorState,
    pub causes: BTreeMap<Actuator, Cause>,
    pub conflicts: Vec<String>,
}

/// Static controller configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlPlan {
    pub schedule: Schedule,
    pub spray: Option<SprayCycle>,
    pub policy: PumpPolicy,
}

impl ControlPlan {
    fn base(&self, actuator: Actuator, t: f64, auto: &ActuatorState) -> (bool, Cause) {
        if self.schedule.bit(actuator, t) {
            return (true, Cause::Schedule);
        }
        let spraying = matches!(actuator, Actuator::FwgsWaterValve | Actuator::FwgsDrugValve)
            && self.spray.is_some_and(|s| s.active_window(t, self.schedule.day_length).is_some());
        if spraying {
            return (true, Cause::Spray);
        }
        if auto.get(actuator) {
            return (true, Cause::Auto);
        }
        (false, Cause::Idle)
    }

    fn automatic(&self, inputs: &FieldInputs) -> ActuatorState {
        let mut auto = ActuatorState::default();
        let p = &self.policy;
        if let (Some(m), Some(lake), Some(tank)) = (inputs.moisture, inputs.lake_level, inputs.tank_level) {
            if p.auto_pump {
                let pump = match inputs.running_pump {
                    // a running pump keeps going until the tank is refilled past the band
                    Some(running) => {
                        let demand = m < p.moisture_low || tank < p.tank_low + p.tank_hysteresis;
                        let lake_ok = lake > p.lake_min || running == Pump::DeepWell;
                        (demand && lake_ok).then_some(running).or_else(|| select_pump(m, lake, tank, inputs.runtime, p))
                    }
                    None => select_pump(m, lake, tank, inputs.runtime, p),
                };
                if let Some(pump) = pump {
                    auto.set(pump.actuator(), true);
                }
            }
            let feed_threshold = p.moisture_low + if inputs.feed_running { p.hysteresis } else { 0.0 };
            if p.auto_feed && m < feed_threshold {
                auto.feed_tap = true;
            }
        }
        auto
    }
}

/// Actuation as a pure function of time, plan, live overrides and inputs.
pub fn tick(t: f64, plan: &ControlPlan, overrides: &Overrides, inputs: &FieldInputs) -> TickOutput {
    let auto = plan.automatic(inputs);
    let mut state = ActuatorState::default();
    let mut causes = BTreeMap::new();
    for a in Actuator::ALL {
        let (bit, cause) = match overrides.get(&a).filter(|o| o.live(t)) {
            Some(o) => (o.bit, Cause::Override(o.command_id)),
            None => plan.base(a, t, &auto),
        };
        state.set(a, bit);
        causes.insert(a, cause);
    }

    let mut conflicts = Vec::new();
    if state.deep_well_pump && state.lake_pump {
        let keep = match (causes[&Actuator::DeepWellPump], causes[&Actuator::LakePump]) {
            (Cause::Override(d), Cause::Override(l)) => {
                if d > l {
                    Actuator::DeepWellPump
                } else {
                    Actuator::LakePump
                }
            }
            (Cause::Override(_), _) => Actuator::DeepWellPump,
            _ => Actuator::LakePump,
        };
        let drop = if keep == Actuator::LakePump { Actuator::DeepWellPump } else { Actuator::LakePump };
        state.set(drop, false);
        causes.insert(drop, Cause::Repair);
        conflicts.push(format!("t={t}: both pumps requested, kept {keep}"));
    }
    if state.fwgs_drug_valve && !state.fwgs_water_valve {
        if matches!(causes[&Actuator::FwgsWaterValve], Cause::Override(_)) {
            state.fwgs_drug_valve = false;
            causes.insert(Actuator::FwgsDrugValve, Cause::Repair);
            conflicts.push(format!("t={t}: drug valve closed, water valve held off by override"));
        } else {
            state.fwgs_water_valve = true;
            causes.insert(Actuator::FwgsWaterValve, causes[&Actuator::FwgsDrugValve]);
            conflicts.push(format!("t={t}: water valve opened to carry drug solution"));
        }
    }
    TickOutput { state, causes, conflicts }
}

// ---------------------------------------------------------------------------
// Stateful controller shell
// ---------------------------------------------------------------------------

/// Command from the control plane, already carrying its ledger id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCommand {
    pub command_id: u64,
    pub action: FieldAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldAction {
    SetRelay { actuator: String, bit: bool, duration_s: Option<f64> },
    ConnectStandby { sensor: String },
    UpdateSchedule { entries: Vec<ScheduleEntry> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAck {
    pub command_id: u64,
    pub ok: bool,
    pub duplicate: bool,
    pub at: f64,
    pub state: ActuatorState,
    pub reason: Option<String>,
    /// Whether an override was installed whose expiry will be reported.
    pub timed: bool,
}

/// Override that ran out; the control plane marks its command completed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub command_id: u64,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationRecord {
    pub tick: f64,
    pub actuator: Actuator,
    pub bit: bool,
    pub cause: String,
}

#[derive(Debug, Clone)]
pub struct FieldController {
    pub plan: ControlPlan,
    overrides: Overrides,
    relays: ActuatorState,
    runtime: PumpRuntime,
    last_command_id: Option<u64>,
    last_tick: Option<f64>,
    last_inputs: FieldInputs,
    log: Vec<ActuationRecord>,
    completions: Vec<Completion>,
    conflicts: u64,
}

impl FieldController {
    pub fn new(plan: ControlPlan) -> Self {
        FieldController {
            plan,
            overrides: Overrides::new(),
            relays: ActuatorState::default(),
            runtime: PumpRuntime::default(),
            last_command_id: None,
            last_tick: None,
            last_inputs: FieldInputs::default(),
            log: Vec::new(),
            completions: Vec::new(),
            conflicts: 0,
        }
    }

    pub fn state(&self) -> ActuatorState {
        self.relays
    }

    pub fn overrides(&self) -> &Overrides {
        &self.overrides
    }

    pub fn runtime(&self) -> PumpRuntime {
        self.runtime
    }

    pub fn conflicts(&self) -> u64 {
        self.conflicts
    }

    pub fn take_log(&mut self) -> Vec<ActuationRecord> {
        std::mem::take(&mut self.log)
    }

    pub fn take_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    fn record(&mut self, t: f64, actuator: Actuator, bit: bool, cause: String) {
        self.log.push(ActuationRecord { tick: t, actuator, bit, cause });
    }

    /// Latch one relay. Returns the resulting state.
    pub fn set_relay(&mut self, t: f64, actuator: Actuator, bit: bool, cause: &str) -> ActuatorState {
        if self.relays.get(actuator) != bit {
            self.relays.set(actuator, bit);
            self.record(t, actuator, bit, cause.to_string());
        }
        self.relays
    }

    /// Latch a relay named on the wire; unknown names are refused.
    pub fn set_relay_named(&mut self, t: f64, name: &str, bit: bool, cause: &str) -> Result<ActuatorState, FieldError> {
        let actuator: Actuator = name.parse()?;
        Ok(self.set_relay(t, actuator, bit, cause))
    }

    fn apply_state(&mut self, t: f64, out: &TickOutput) {
        for a in Actuator::ALL {
            let bit = out.state.get(a);
            if self.relays.get(a) != bit {
                self.relays.set(a, bit);
                let cause = out.causes.get(&a).copied().unwrap_or_default().to_string();
                self.record(t, a, bit, cause);
            }
        }
    }

    /// Applies a relayed command once. Ids at or below the last applied id
    /// are acknowledged again without acting. `ConnectStandby` is returned to
    /// the caller, which owns the sensor nodes.
    pub fn handle_command(&mut self, t: f64, cmd: &FieldCommand) -> CommandOutcome {
        if self.last_command_id.is_some_and(|last| cmd.command_id <= last) {
            return CommandOutcome::Ack(FieldAck {
                command_id: cmd.command_id,
                ok: true,
                duplicate: true,
                at: t,
                state: self.relays,
                reason: None,
                timed: false,
            });
        }
        self.last_command_id = Some(cmd.command_id);
        let mut ack = FieldAck {
            command_id: cmd.command_id,
            ok: true,
            duplicate: false,
            at: t,
            state: self.relays,
            reason: None,
            timed: false,
        };
        match &cmd.action {
            FieldAction::SetRelay { actuator, bit, duration_s } => match actuator.parse::<Actuator>() {
                Err(e) => {
                    ack.ok = false;
                    ack.reason = Some(e.to_string());
                }
                Ok(actuator) => {
                    ack.timed = self.install_override(t, cmd.command_id, actuator, *bit, *duration_s);
                    let out = self.evaluate(t);
                    self.apply_state(t, &out);
                    ack.state = self.relays;
                }
            },
            FieldAction::ConnectStandby { sensor } => {
                return CommandOutcome::ConnectStandby { ack, sensor: sensor.clone() };
            }
            FieldAction::UpdateSchedule { entries } => {
                match Schedule::new(entries.clone(), self.plan.schedule.day_length) {
                    Ok(schedule) => self.plan.schedule = schedule,
                    Err(e) => {
                        ack.ok = false;
                        ack.reason = Some(e.to_string());
                    }
                }
            }
        }
        CommandOutcome::Ack(ack)
    }

    /// ON/OFF with a duration holds for that long. OFF without one holds until
    /// the current schedule or spray window ends; outside a window it only
    /// cancels any active override.
    fn install_override(&mut self, t: f64, id: u64, actuator: Actuator, bit: bool, duration: Option<f64>) -> bool {
        let day = self.plan.schedule.day_length;
        let expires_at = match (bit, duration) {
            (_, Some(d)) => Some(t + d),
            (true, None) => Some(f64::INFINITY),
            (false, None) => {
                let sched = self.plan.schedule.active_entry(actuator, t).map(|e| e.window_end(t, day));
                let spray = matches!(actuator, Actuator::FwgsWaterValve | Actuator::FwgsDrugValve)
                    .then(|| self.plan.spray.and_then(|s| s.active_window(t, day)).map(|(_, e)| e))
                    .flatten();
                sched.into_iter().chain(spray).reduce(f64::max)
            }
        };
        if let Some(previous) = self.overrides.remove(&actuator) {
            // superseded before running out; report it finished now
            self.completions.push(Completion { command_id: previous.command_id, at: t });
        }
        match expires_at {
            Some(expires_at) => {
                self.overrides.insert(actuator, OverrideRecord { command_id: id, actuator, bit, expires_at });
                true
            }
            None => false,
        }
    }

    fn inputs(&self, sensors: &FieldInputs) -> FieldInputs {
        FieldInputs {
            runtime: self.runtime,
            running_pump: if self.relays.deep_well_pump {
                Some(Pump::DeepWell)
            } else if self.relays.lake_pump {
                Some(Pump::Lake)
            } else {
                None
            },
            feed_running: self.relays.feed_tap,
            ..*sensors
        }
    }

    fn evaluate(&self, t: f64) -> TickOutput {
        tick(t, &self.plan, &self.overrides, &self.inputs(&self.last_inputs))
    }

    /// Advance to `t`: expire overrides, recompute actuation, accumulate pump
    /// running time since the previous tick.
    pub fn tick(&mut self, t: f64, sensors: &FieldInputs) -> TickOutput {
        if let Some(prev) = self.last_tick {
            let hours = (t - prev).max(0.0) / 3600.0;
            if self.relays.deep_well_pump {
                self.runtime.deep_well_h += hours;
            }
            if self.relays.lake_pump {
                self.runtime.lake_h += hours;
            }
        }
        self.last_tick = Some(t);
        self.last_inputs = *sensors;

        let expired: Vec<Actuator> =
            self.overrides.iter().filter(|(_, o)| !o.live(t)).map(|(a, _)| *a).collect();
        for a in expired {
            let o = self.overrides.remove(&a).expect("listed");
            self.completions.push(Completion { command_id: o.command_id, at: o.expires_at });
        }

        let out = tick(t, &self.plan, &self.overrides, &self.inputs(sensors));
        self.conflicts += out.conflicts.len() as u64;
        for c in &out.conflicts {
            log::debug!("{c}");
        }
        self.apply_state(t, &out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandOutcome {
    Ack(FieldAck),
    ConnectStandby { ack: FieldAck, sensor: String },
}

/// Actuation log as CSV: tick, actuator, bit, cause.
pub fn write_actuation_log<W: Write>(out: W, records: &[ActuationRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "actuator", "bit", "cause"])?;
    for r in records {
        w.write_record([r.tick.to_string(), r.actuator.to_string(), u8::from(r.bit).to_string(), r.cause.clone()])?;
    }
    w.flush()?;
    Ok(())
}
