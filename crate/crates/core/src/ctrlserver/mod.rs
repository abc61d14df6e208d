//! Manager-facing control plane: sessions, the status and control windows,
//! the command ledger, history export and durable recovery.
//!
//! Time comes in two flavours. Session expiry is checked against a wall
//! clock passed by the caller; everything else runs on simulation time set
//! through [`ControlServer::advance`].

mod auth;
mod commands;
mod store;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use auth::{Auth, AuthError, PasswordHash, Session, UserRecord, DEFAULT_SESSION_TTL_S, LOCKOUT_THRESHOLD};
pub use commands::{
    validate_command, CommandEnvelope, CommandError, CommandState, ControlCommand, Device, IssueRequest,
    Transition, ValidCommand,
};
pub use store::{Recovered, Store, StoreError};

use crate::fieldctl::{ActuatorState, FieldAck, FieldCommand};
use crate::fieldnet::TestStatus;
use crate::gateway::{
    fifo_append, HistoryBuffer, HistoryCsv, HistoryEntry, LiveRow, Snapshot, SyncAck, UpstreamEvent,
    DEFAULT_HISTORY_CAPACITY,
};
use crate::sensor::SensorKind;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub session_ttl_s: f64,
    /// How long a command may wait for its field ack. ConnectStandby uses
    /// its own duration instead.
    pub ack_timeout_s: f64,
    pub history_capacity: usize,
    /// Log records between state-file compactions.
    pub compact_every: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            session_ttl_s: DEFAULT_SESSION_TTL_S,
            ack_timeout_s: 120.0,
            history_capacity: DEFAULT_HISTORY_CAPACITY,
            compact_every: 2000,
        }
    }
}

/// One line of the status window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRow {
    pub sensor: SensorKind,
    pub sensor_name: String,
    /// Engineering units; `None` until the first sync carries a reading.
    pub present_data: Option<f64>,
    pub unit: String,
    pub test_done_before: Option<f64>,
    pub test_status: TestStatus,
    pub no_data: bool,
    pub last_frame_time: Option<f64>,
}

/// One line of the control window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub device: Device,
    pub device_name: String,
    pub present_status: String,
    pub control_command: ControlCommand,
    pub duration_s: Option<f64>,
    pub command_id: Option<u64>,
    pub command_state: Option<CommandState>,
}

/// Pushed to event-stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    Status { at: f64, rows: Vec<StatusRow> },
    Control { at: f64, rows: Vec<ControlRow> },
    Command { envelope: CommandEnvelope },
    Alarm { at: f64, sensor: SensorKind, sensor_name: String, test_status: TestStatus },
}

/// Everything that survives a restart.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ServerState {
    pub log_seq: u64,
    pub now: f64,
    pub next_command_id: u64,
    pub commands: BTreeMap<u64, CommandEnvelope>,
    pub rows: Vec<LiveRow>,
    pub last_sync_id: u64,
    pub last_event_seq: u64,
    pub last_history_index: Option<u64>,
    pub history: BTreeMap<SensorKind, HistoryBuffer<HistoryEntry>>,
    pub field_state: Option<ActuatorState>,
    pub login_failures: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Issued { envelope: CommandEnvelope },
    Moved { command_id: u64, state: CommandState, at: f64, reason: Option<String> },
    Dispatched { command_ids: Vec<u64>, at: f64 },
    Synced { snapshot: Snapshot, at: f64 },
    Login { user: String, ok: bool },
    Clock { now: f64 },
}

#[derive(Debug)]
pub struct ControlServer {
    cfg: ServerConfig,
    sensors: Vec<SensorKind>,
    auth: Auth,
    state: ServerState,
    store: Option<Store>,
    events: Vec<ServerEvent>,
    /// Suppresses logging while state is rebuilt from records.
    replaying: bool,
    capture_events: bool,
}

/// Shortest decimal text of an `f32`, read back as `f64`, so 0.7 stays 0.7.
pub fn f32_display(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(f64::from(v))
}

impl ControlServer {
    /// In-memory server.
    pub fn new(cfg: ServerConfig, sensors: Vec<SensorKind>) -> Self {
        let auth = Auth::new(cfg.session_ttl_s);
        let state = ServerState { next_command_id: 1, ..ServerState::default() };
        ControlServer { cfg, sensors, auth, state, store: None, events: Vec::new(), replaying: false, capture_events: true }
    }

    /// Server backed by `dir`. Returns recovery warnings (for example a
    /// dropped torn record).
    pub fn open(cfg: ServerConfig, sensors: Vec<SensorKind>, dir: &Path) -> Result<(Self, Vec<String>), ServerError> {
        let (store, recovered) = Store::open::<ServerState, Record>(dir, |s| s.log_seq)?;
        let mut server = ControlServer::new(cfg, sensors);
        if let Some(state) = recovered.state {
            server.state = state;
        }
        server.replaying = true;
        for (seq, rec) in recovered.records {
            server.apply_record(rec);
            server.state.log_seq = seq;
        }
        server.replaying = false;
        server.events.clear();
        server.store = Some(store);
        Ok((server, recovered.warnings))
    }

    /// Batch runs with no subscribers turn event capture off.
    pub fn set_event_capture(&mut self, on: bool) {
        self.capture_events = on;
        if !on {
            self.events.clear();
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn sensors(&self) -> &[SensorKind] {
        &self.sensors
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn now(&self) -> f64 {
        self.state.now
    }

    fn log(&mut self, rec: Record) -> Result<(), ServerError> {
        if self.replaying {
            return Ok(());
        }
        if let Some(store) = &mut self.store {
            self.state.log_seq = store.append(&rec)?;
            if store.records_since_compaction() >= self.cfg.compact_every {
                store.compact(&self.state)?;
            }
        }
        Ok(())
    }

    /// Fold a record into state without logging it again.
    fn apply_record(&mut self, rec: Record) {
        match rec {
            Record::Issued { envelope } => {
                self.state.next_command_id = self.state.next_command_id.max(envelope.command_id + 1);
                self.state.commands.insert(envelope.command_id, envelope);
            }
            Record::Moved { command_id, state, at, reason } => {
                if let Some(e) = self.state.commands.get_mut(&command_id) {
                    e.advance(state, at, reason);
                }
            }
            Record::Dispatched { command_ids, at } => {
                for id in command_ids {
                    if let Some(e) = self.state.commands.get_mut(&id) {
                        e.advance(CommandState::Dispatched, at, None);
                    }
                }
            }
            Record::Synced { snapshot, at } => {
                let _ = self.apply_snapshot_inner(&snapshot, at);
            }
            Record::Login { user, ok } => {
                let n = self.state.login_failures.entry(user).or_default();
                *n = if ok { 0 } else { *n + 1 };
            }
            Record::Clock { now } => {
                self.state.now = self.state.now.max(now);
            }
        }
    }

    // -- sessions ---------------------------------------------------------

    pub fn add_user(&mut self, user: &str, hash: PasswordHash) {
        self.auth.add_user(user, hash);
        let failures = self.state.login_failures.get(user).copied().unwrap_or(0);
        self.auth.set_failures(user, failures);
    }

    pub fn login(&mut self, user: &str, password: &str, wall_now: f64) -> Result<Session, ServerError> {
        let result = self.auth.login(user, password, wall_now);
        if self.auth.user(user).is_some() {
            let ok = result.is_ok();
            let before = self.state.login_failures.get(user).copied().unwrap_or(0);
            let after = self.auth.user(user).map_or(0, |u| u.consecutive_failures);
            if before != after || !ok {
                self.state.login_failures.insert(user.to_string(), after);
                self.log(Record::Login { user: user.to_string(), ok })?;
            }
        }
        Ok(result?)
    }

    pub fn logout(&mut self, token: Option<&str>, wall_now: f64) -> Result<(), ServerError> {
        self.auth.authorize(token, wall_now)?;
        self.auth.logout(token.unwrap_or_default());
        Ok(())
    }

    pub fn authorize(&mut self, token: Option<&str>, wall_now: f64) -> Result<String, ServerError> {
        Ok(self.auth.authorize(token, wall_now)?)
    }

    // -- windows ----------------------------------------------------------

    pub fn status_table(&self) -> Vec<StatusRow> {
        let now = self.state.now;
        self.sensors
            .iter()
            .map(|&kind| {
                let row = self.state.rows.iter().find(|r| r.kind == kind);
                let value = row.and_then(|r| r.last_value);
                StatusRow {
                    sensor: kind,
                    sensor_name: kind.display_name().to_string(),
                    present_data: value.map(f32_display),
                    unit: kind.unit().to_string(),
                    test_done_before: row.and_then(|r| r.test_age(now)),
                    test_status: row.map_or(TestStatus::Ok, |r| r.test_status),
                    no_data: value.is_none(),
                    last_frame_time: row.and_then(|r| r.last_frame_time),
                }
            })
            .collect()
    }

    pub fn get_status_table(&mut self, token: Option<&str>, wall_now: f64) -> Result<Vec<StatusRow>, ServerError> {
        self.authorize(token, wall_now)?;
        Ok(self.status_table())
    }

    fn latest_command(&self, device: Device) -> Option<&CommandEnvelope> {
        self.state.commands.values().rev().find(|e| e.device == device)
    }

    pub fn control_table(&self) -> Vec<ControlRow> {
        Device::ALL
            .into_iter()
            .map(|device| {
                let present_status = match device.actuator() {
                    Some(a) => match self.state.field_state {
                        Some(s) => if s.get(a) { "ON" } else { "OFF" }.to_string(),
                        None => "unknown".to_string(),
                    },
                    None => {
                        let on_standby: Vec<&str> = self
                            .state
                            .rows
                            .iter()
                            .filter(|r| r.flags.standby())
                            .map(|r| r.kind.display_name())
                            .collect();
                        if on_standby.is_empty() {
                            "none".to_string()
                        } else {
                            on_standby.join(", ")
                        }
                    }
                };
                let latest = self.latest_command(device);
                let default_cmd =
                    if device == Device::StandbySelector { ControlCommand::NoChange } else { ControlCommand::Off };
                ControlRow {
                    device,
                    device_name: device.display_name().to_string(),
                    present_status,
                    control_command: latest.map_or(default_cmd, |e| e.command),
                    duration_s: latest.and_then(|e| e.duration_s),
                    command_id: latest.map(|e| e.command_id),
                    command_state: latest.map(|e| e.state),
                }
            })
            .collect()
    }

    pub fn get_control_table(&mut self, token: Option<&str>, wall_now: f64) -> Result<Vec<ControlRow>, ServerError> {
        self.authorize(token, wall_now)?;
        Ok(self.control_table())
    }

    // -- command ledger ---------------------------------------------------

    pub fn commands(&self) -> impl Iterator<Item = &CommandEnvelope> {
        self.state.commands.values()
    }

    pub fn command(&self, id: u64) -> Option<&CommandEnvelope> {
        self.state.commands.get(&id)
    }

    pub fn issue_command(
        &mut self,
        token: Option<&str>,
        wall_now: f64,
        req: &IssueRequest,
    ) -> Result<CommandEnvelope, ServerError> {
        let user = self.authorize(token, wall_now)?;
        self.issue_as(&user, req)
    }

    /// Issue on behalf of an already authenticated user.
    pub fn issue_as(&mut self, user: &str, req: &IssueRequest) -> Result<CommandEnvelope, ServerError> {
        let cmd = validate_command(req)?;
        let now = self.state.now;
        let superseded: Vec<u64> = self
            .state
            .commands
            .values()
            .filter(|e| e.device == cmd.device && matches!(e.state, CommandState::Pending | CommandState::Dispatched))
            .map(|e| e.command_id)
            .collect();
        for id in superseded {
            self.move_command(id, CommandState::Expired, now, Some("superseded".into()))?;
        }
        let id = self.state.next_command_id;
        self.state.next_command_id += 1;
        let envelope = CommandEnvelope::new(id, user, now, cmd);
        self.state.commands.insert(id, envelope.clone());
        self.log(Record::Issued { envelope: envelope.clone() })?;
        if self.capture_events {
            self.events.push(ServerEvent::Command { envelope: envelope.clone() });
        }
        self.push_control_event();
        Ok(envelope)
    }

    fn move_command(&mut self, id: u64, next: CommandState, at: f64, reason: Option<String>) -> Result<bool, ServerError> {
        let Some(e) = self.state.commands.get_mut(&id) else { return Ok(false) };
        if !e.advance(next, at, reason.clone()) {
            return Ok(false);
        }
        let envelope = e.clone();
        self.log(Record::Moved { command_id: id, state: next, at, reason })?;
        if self.capture_events {
            self.events.push(ServerEvent::Command { envelope });
        }
        Ok(true)
    }

    fn ack_timeout(&self, e: &CommandEnvelope) -> f64 {
        match e.command {
            ControlCommand::ConnectStandby => e.duration_s.unwrap_or(self.cfg.ack_timeout_s),
            _ => self.cfg.ack_timeout_s,
        }
    }

    /// Move simulation time forward and expire commands whose ack is overdue.
    pub fn advance(&mut self, now: f64) -> Result<(), ServerError> {
        if now > self.state.now {
            self.state.now = now;
        }
        let overdue: Vec<u64> = self
            .state
            .commands
            .values()
            .filter(|e| matches!(e.state, CommandState::Pending | CommandState::Dispatched))
            .filter(|e| now - e.issued_at >= self.ack_timeout(e))
            .map(|e| e.command_id)
            .collect();
        if !overdue.is_empty() {
            self.log(Record::Clock { now })?;
            for id in overdue {
                self.move_command(id, CommandState::Expired, now, Some("ack timeout".into()))?;
            }
            self.push_control_event();
        }
        Ok(())
    }

    /// Commands to hand to the gateway: new ones plus dispatched ones still
    /// waiting for an ack. The field controller drops repeats by id.
    pub fn dispatch(&mut self) -> Result<Vec<FieldCommand>, ServerError> {
        let now = self.state.now;
        let mut fresh = Vec::new();
        let mut out = Vec::new();
        for e in self.state.commands.values_mut() {
            match e.state {
                CommandState::Pending => {
                    e.advance(CommandState::Dispatched, now, None);
                    fresh.push(e.command_id);
                    out.push(e.to_field());
                }
                CommandState::Dispatched => out.push(e.to_field()),
                _ => {}
            }
        }
        if !fresh.is_empty() {
            for id in fresh.iter().filter(|_| self.capture_events) {
                let envelope = self.state.commands[id].clone();
                self.events.push(ServerEvent::Command { envelope });
            }
            self.log(Record::Dispatched { command_ids: fresh, at: now })?;
            self.push_control_event();
        }
        Ok(out)
    }

    fn apply_ack(&mut self, ack: &FieldAck) -> Result<(), ServerError> {
        if self.state.field_state.is_none() || ack.ok {
            self.state.field_state = Some(ack.state);
        }
        let Some(e) = self.state.commands.get(&ack.command_id) else {
            log::warn!("ack for unknown command {}", ack.command_id);
            return Ok(());
        };
        if e.state != CommandState::Dispatched {
            return Ok(());
        }
        let id = ack.command_id;
        self.move_command(id, CommandState::Acked, ack.at, None)?;
        if !ack.ok {
            self.move_command(id, CommandState::Expired, ack.at, ack.reason.clone())?;
        } else if !ack.timed {
            self.move_command(id, CommandState::Completed, ack.at, None)?;
        }
        Ok(())
    }

    /// Apply one gateway snapshot. Repeats and stale snapshots change
    /// nothing but are still acknowledged.
    pub fn apply_snapshot(&mut self, snapshot: &Snapshot) -> Result<SyncAck, ServerError> {
        let at = self.state.now;
        let ack = self.apply_snapshot_inner(snapshot, at)?;
        Ok(ack)
    }

    fn apply_snapshot_inner(&mut self, snapshot: &Snapshot, at: f64) -> Result<SyncAck, ServerError> {
        let ack = SyncAck {
            sync_id: snapshot.sync_id,
            history_upto: snapshot.last_history_index(),
            events_upto: snapshot.last_event_seq(),
        };
        if snapshot.sync_id <= self.state.last_sync_id {
            return Ok(ack);
        }
        // Effects are not logged individually; replaying the snapshot
        // re-derives them.
        let was_replaying = self.replaying;
        self.replaying = true;
        let result = self.fold_snapshot(snapshot, at);
        self.replaying = was_replaying;
        result?;
        self.log(Record::Synced { snapshot: snapshot.clone(), at })?;
        Ok(ack)
    }

    fn fold_snapshot(&mut self, snapshot: &Snapshot, at: f64) -> Result<(), ServerError> {
        self.state.last_sync_id = snapshot.sync_id;
        for (seq, event) in &snapshot.events {
            if *seq <= self.state.last_event_seq {
                continue;
            }
            self.state.last_event_seq = *seq;
            match event {
                UpstreamEvent::Ack(ack) => self.apply_ack(ack)?,
                UpstreamEvent::Completed(c) => {
                    if self.state.commands.get(&c.command_id).is_some_and(|e| e.state == CommandState::Acked) {
                        self.move_command(c.command_id, CommandState::Completed, c.at, None)?;
                    }
                }
            }
        }
        if let Some(fs) = snapshot.field_state {
            self.state.field_state = Some(fs);
        }
        for entry in &snapshot.history {
            if self.state.last_history_index.is_some_and(|last| entry.index <= last) {
                continue;
            }
            self.state.last_history_index = Some(entry.index);
            let cap = self.cfg.history_capacity;
            fifo_append(self.state.history.entry(entry.kind).or_insert_with(|| HistoryBuffer::new(cap)), *entry);
        }
        let previous = std::mem::replace(&mut self.state.rows, snapshot.rows.clone());
        self.state.now = self.state.now.max(at);
        if !self.capture_events {
            return Ok(());
        }

        let now = self.state.now;
        let mut events = vec![ServerEvent::Status { at: now, rows: self.status_table() }];
        for row in &self.state.rows {
            let before = previous.iter().find(|r| r.kind == row.kind).map(|r| r.test_status);
            if row.test_status != TestStatus::Ok && before != Some(row.test_status) {
                events.push(ServerEvent::Alarm {
                    at: now,
                    sensor: row.kind,
                    sensor_name: row.kind.display_name().to_string(),
                    test_status: row.test_status,
                });
            }
        }
        events.push(ServerEvent::Control { at: now, rows: self.control_table() });
        self.events.extend(events);
        Ok(())
    }

    fn push_control_event(&mut self) {
        if !self.capture_events {
            return;
        }
        let at = self.state.now;
        self.events.push(ServerEvent::Control { at, rows: self.control_table() });
    }

    pub fn drain_events(&mut self) -> Vec<ServerEvent> {
        std::mem::take(&mut self.events)
    }

    // -- history ----------------------------------------------------------

    /// Retained entries for `sensor` (all sensors when `None`) with
    /// `from <= time <= to`, time-ordered.
    pub fn history(&self, sensor: Option<SensorKind>, from: Option<f64>, to: Option<f64>) -> Vec<HistoryEntry> {
        let in_range = |e: &&HistoryEntry| from.is_none_or(|f| e.time >= f) && to.is_none_or(|t| e.time <= t);
        let mut out: Vec<HistoryEntry> = self
            .state
            .history
            .iter()
            .filter(|(k, _)| sensor.is_none_or(|s| s == **k))
            .flat_map(|(_, b)| b.iter().filter(in_range).copied())
            .collect();
        out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.index.cmp(&b.index)));
        out
    }

    pub fn export_history<W: Write>(
        &mut self,
        token: Option<&str>,
        wall_now: f64,
        sensor: Option<SensorKind>,
        from: Option<f64>,
        to: Option<f64>,
        out: W,
    ) -> Result<W, ServerError> {
        self.authorize(token, wall_now)?;
        let mut csv = HistoryCsv::new(out)?;
        for e in self.history(sensor, from, to) {
            csv.write(&e)?;
        }
        Ok(csv.finish()?)
    }

    /// Fold the log into the state file.
    pub fn flush(&mut self) -> Result<(), ServerError> {
        if let Some(store) = &mut self.store {
            store.compact(&self.state)?;
            store.sync()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldnet::Flags;

    fn server() -> (ControlServer, String) {
        let mut s = ControlServer::new(ServerConfig::default(), SensorKind::ALL.to_vec());
        s.add_user("manager", PasswordHash::with_salt("pw", b"salt", 100));
        let token = s.login("manager", "pw", 0.0).unwrap().token;
        (s, token)
    }

    fn req(device: &str, command: ControlCommand, duration_s: Option<f64>) -> IssueRequest {
        IssueRequest { device: device.into(), command, duration_s, sensor: None }
    }

    #[test]
    fn rows_exist_before_first_sync() {
        let (s, _) = server();
        let rows = s.status_table();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.no_data && r.present_data.is_none()));
        let control = s.control_table();
        assert_eq!(control.len(), 5);
        assert_eq!(control[4].control_command, ControlCommand::NoChange);
        assert_eq!(control[0].present_status, "unknown");
    }

    #[test]
    fn unauthenticated_calls_rejected() {
        let (mut s, _) = server();
        let r = req("lake_pump", ControlCommand::On, Some(30.0));
        assert!(matches!(s.issue_command(None, 0.0, &r), Err(ServerError::Auth(AuthError::MissingToken))));
        assert!(s.get_status_table(Some("bogus"), 0.0).is_err());
        assert_eq!(s.commands().count(), 0);
    }

    #[test]
    fn present_status_waits_for_ack() {
        let (mut s, token) = server();
        let e = s.issue_command(Some(&token), 1.0, &req("lake_pump", ControlCommand::On, Some(30.0))).unwrap();
        let cmds = s.dispatch().unwrap();
        assert_eq!(cmds.len(), 1);
        assert_eq!(s.control_table()[1].present_status, "unknown");
        let mut on = ActuatorState::default();
        on.lake_pump = true;
        let snapshot = Snapshot {
            sync_id: 1,
            at: 5.0,
            rows: vec![],
            history: vec![],
            field_state: Some(on),
            events: vec![(
                1,
                UpstreamEvent::Ack(FieldAck {
                    command_id: e.command_id,
                    ok: true,
                    duplicate: false,
                    at: 5.0,
                    state: on,
                    reason: None,
                    timed: true,
                }),
            )],
        };
        s.apply_snapshot(&snapshot).unwrap();
        assert_eq!(s.control_table()[1].present_status, "ON");
        assert_eq!(s.command(e.command_id).unwrap().state, CommandState::Acked);
        // duplicate snapshot is a no-op
        let before = s.state().commands.clone();
        s.apply_snapshot(&snapshot).unwrap();
        assert_eq!(s.state().commands, before);
    }

    #[test]
    fn newer_command_supersedes_pending() {
        let (mut s, token) = server();
        let a = s.issue_command(Some(&token), 0.0, &req("lake_pump", ControlCommand::On, Some(30.0))).unwrap();
        let b = s.issue_command(Some(&token), 0.0, &req("lake_pump", ControlCommand::Off, None)).unwrap();
        assert_eq!(s.command(a.command_id).unwrap().state, CommandState::Expired);
        assert_eq!(s.command(b.command_id).unwrap().state, CommandState::Pending);
    }

    #[test]
    fn unacked_command_times_out() {
        let (mut s, token) = server();
        let a = s.issue_command(Some(&token), 0.0, &req("lake_pump", ControlCommand::Off, None)).unwrap();
        s.dispatch().unwrap();
        s.advance(119.0).unwrap();
        assert_eq!(s.command(a.command_id).unwrap().state, CommandState::Dispatched);
        s.advance(120.0).unwrap();
        assert_eq!(s.command(a.command_id).unwrap().state, CommandState::Expired);
    }

    #[test]
    fn standby_selector_reports_standby_rows() {
        let (mut s, _) = server();
        let mut row = LiveRow {
            node_id: 2,
            kind: SensorKind::TankLevel,
            last_value: Some(2.5),
            last_frame_time: Some(30.0),
            last_test_time: Some(30.0),
            test_status: TestStatus::Error,
            flags: Flags(Flags::STANDBY | Flags::TEST_ERROR),
        };
        let snap = |id, row: &LiveRow| Snapshot {
            sync_id: id,
            at: 30.0,
            rows: vec![row.clone()],
            history: vec![],
            field_state: None,
            events: vec![],
        };
        s.apply_snapshot(&snap(1, &row)).unwrap();
        assert_eq!(s.control_table()[4].present_status, "Water level in overhead tank");
        let events = s.drain_events();
        assert!(events.iter().any(|e| matches!(e, ServerEvent::Alarm { .. })));
        row.flags = Flags(0);
        s.apply_snapshot(&snap(2, &row)).unwrap();
        assert_eq!(s.control_table()[4].present_status, "none");
    }

    #[test]
    fn f32_values_display_cleanly() {
        assert_eq!(f32_display(0.7), 0.7);
        assert_eq!(f32_display(25.5), 25.5);
    }
}
