use std::fs::OpenOptions;
use std::io::Write;

use fieldlink_core::ctrlserver::{
    AuthError, CommandState, ControlCommand, ControlServer, Device, IssueRequest, PasswordHash, ServerConfig,
    ServerError, LOCKOUT_THRESHOLD,
};
use fieldlink_core::fieldctl::{ActuatorState, Completion, FieldAck};
use fieldlink_core::fieldnet::Flags;
use fieldlink_core::gateway::{HistoryEntry, Snapshot, UpstreamEvent};
use fieldlink_core::SensorKind;
use proptest::prelude::*;

fn hash(pw: &str) -> PasswordHash {
    PasswordHash::with_salt(pw, b"integration-salt", 50)
}

fn server() -> ControlServer {
    let mut s = ControlServer::new(ServerConfig::default(), SensorKind::ALL.to_vec());
    s.add_user("manager", hash("secret"));
    s
}

fn lake_on(d: f64) -> IssueRequest {
    IssueRequest { device: "lake_pump".into(), command: ControlCommand::On, duration_s: Some(d), sensor: None }
}

fn ack(id: u64, at: f64, state: ActuatorState, timed: bool) -> FieldAck {
    FieldAck { command_id: id, ok: true, duplicate: false, at, state, reason: None, timed }
}

fn snapshot(sync_id: u64, at: f64, events: Vec<(u64, UpstreamEvent)>, history: Vec<HistoryEntry>) -> Snapshot {
    Snapshot { sync_id, at, rows: Vec::new(), history, field_state: None, events }
}

#[test]
fn login_and_session_expiry() {
    let mut s = server();
    let session = s.login("manager", "secret", 0.0).unwrap();
    assert!(s.authorize(Some(&session.token), 10.0).is_ok());
    assert!(matches!(s.login("manager", "nope", 0.0), Err(ServerError::Auth(AuthError::BadCredentials))));
    assert!(matches!(s.login("nobody", "secret", 0.0), Err(ServerError::Auth(AuthError::BadCredentials))));
    let ttl = s.config().session_ttl_s;
    assert_eq!(ttl, 1800.0);
    assert!(matches!(s.authorize(Some(&session.token), ttl), Err(ServerError::Auth(AuthError::SessionExpired))));
    assert!(matches!(s.authorize(Some(&session.token), 1.0), Err(ServerError::Auth(AuthError::InvalidToken))));
}

#[test]
fn lockout_after_ten_failures() {
    let mut s = server();
    for i in 1..=LOCKOUT_THRESHOLD {
        let e = s.login("manager", "wrong", 0.0).unwrap_err();
        let locked = matches!(e, ServerError::Auth(AuthError::LockedOut));
        assert_eq!(locked, i == LOCKOUT_THRESHOLD, "attempt {i}");
    }
    assert!(matches!(s.login("manager", "secret", 0.0), Err(ServerError::Auth(AuthError::LockedOut))));
}

#[test]
fn nine_failures_then_success_resets_the_count() {
    let mut s = server();
    for _ in 0..LOCKOUT_THRESHOLD - 1 {
        let _ = s.login("manager", "wrong", 0.0);
    }
    s.login("manager", "secret", 0.0).unwrap();
    for _ in 0..LOCKOUT_THRESHOLD - 1 {
        let _ = s.login("manager", "wrong", 0.0);
    }
    assert!(s.login("manager", "secret", 0.0).is_ok());
}

#[test]
fn tokenless_calls_change_nothing() {
    let mut s = server();
    let before = serde_json::to_string(s.state()).unwrap();
    for token in [None, Some(""), Some("deadbeef")] {
        assert!(s.issue_command(token, 0.0, &lake_on(30.0)).is_err());
        assert!(s.get_status_table(token, 0.0).is_err());
        assert!(s.get_control_table(token, 0.0).is_err());
        assert!(s.export_history(token, 0.0, None, None, None, Vec::new()).is_err());
        assert!(s.logout(token, 0.0).is_err());
    }
    assert_eq!(serde_json::to_string(s.state()).unwrap(), before);
    assert_eq!(s.commands().count(), 0);
}

#[test]
fn status_rows_exist_before_first_sync() {
    let s = server();
    let rows = s.status_table();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.no_data && r.present_data.is_none()));
}

#[test]
fn control_table_lists_the_five_devices() {
    let s = server();
    let devices: Vec<Device> = s.control_table().iter().map(|r| r.device).collect();
    assert_eq!(devices, Device::ALL.to_vec());
}

#[test]
fn present_status_follows_acks_not_intent() {
    let mut s = server();
    let token = s.login("manager", "secret", 0.0).unwrap().token;
    let env = s.issue_command(Some(&token), 0.0, &lake_on(30.0)).unwrap();
    let lake_row = |s: &ControlServer| s.control_table().into_iter().find(|r| r.device == Device::LakePump).unwrap();
    assert_eq!(lake_row(&s).present_status, "unknown");
    assert_eq!(lake_row(&s).command_state, Some(CommandState::Pending));
    s.dispatch().unwrap();
    assert_eq!(lake_row(&s).present_status, "unknown");

    let on = ActuatorState { lake_pump: true, ..ActuatorState::default() };
    s.apply_snapshot(&snapshot(1, 5.0, vec![(1, UpstreamEvent::Ack(ack(env.command_id, 5.0, on, true)))], vec![])).unwrap();
    assert_eq!(lake_row(&s).present_status, "ON");
    assert_eq!(s.command(env.command_id).unwrap().state, CommandState::Acked);

    let done = UpstreamEvent::Completed(Completion { command_id: env.command_id, at: 35.0 });
    let snap = Snapshot { field_state: Some(ActuatorState::default()), ..snapshot(2, 35.0, vec![(2, done)], vec![]) };
    s.apply_snapshot(&snap).unwrap();
    assert_eq!(lake_row(&s).present_status, "OFF");
    assert_eq!(s.command(env.command_id).unwrap().state, CommandState::Completed);
}

#[test]
fn duplicate_snapshot_is_idempotent() {
    let mut s = server();
    let h = HistoryEntry { index: 0, time: 1.0, kind: SensorKind::Ph, value: 6.0, flags: Flags(0) };
    let snap = snapshot(1, 1.0, vec![], vec![h]);
    let a1 = s.apply_snapshot(&snap).unwrap();
    let state = serde_json::to_string(s.state()).unwrap();
    let a2 = s.apply_snapshot(&snap).unwrap();
    assert_eq!(a1, a2);
    assert_eq!(serde_json::to_string(s.state()).unwrap(), state);
    assert_eq!(s.history(None, None, None).len(), 1);
}

#[test]
fn newer_command_supersedes_pending_one() {
    let mut s = server();
    let a = s.issue_as("manager", &lake_on(30.0)).unwrap();
    let b = s.issue_as("manager", &lake_on(60.0)).unwrap();
    assert!(b.command_id > a.command_id);
    assert_eq!(s.command(a.command_id).unwrap().state, CommandState::Expired);
    assert_eq!(s.command(b.command_id).unwrap().state, CommandState::Pending);
}

#[test]
fn validation_errors() {
    let mut s = server();
    let bad = [
        IssueRequest { device: "lake_pump".into(), command: ControlCommand::On, duration_s: None, sensor: None },
        IssueRequest { device: "lake_pump".into(), command: ControlCommand::On, duration_s: Some(-1.0), sensor: None },
        IssueRequest { device: "lake_pump".into(), command: ControlCommand::Off, duration_s: Some(5.0), sensor: None },
        IssueRequest { device: "sluice".into(), command: ControlCommand::Off, duration_s: None, sensor: None },
        IssueRequest { device: "standby_selector".into(), command: ControlCommand::ConnectStandby, duration_s: Some(1000.0), sensor: None },
        IssueRequest { device: "lake_pump".into(), command: ControlCommand::ConnectStandby, duration_s: Some(10.0), sensor: None },
    ];
    for r in &bad {
        assert!(matches!(s.issue_as("manager", r), Err(ServerError::Command(_))), "{r:?}");
    }
    assert_eq!(s.commands().count(), 0);
}

#[test]
fn export_history_ranges() {
    let mut cfg = ServerConfig::default();
    cfg.history_capacity = 5;
    let mut s = ControlServer::new(cfg, SensorKind::ALL.to_vec());
    s.add_user("manager", hash("secret"));
    let token = s.login("manager", "secret", 0.0).unwrap().token;
    let history: Vec<HistoryEntry> = (0..8)
        .map(|i| HistoryEntry { index: i, time: i as f64 * 10.0, kind: SensorKind::Wind, value: i as f32, flags: Flags(0) })
        .collect();
    s.apply_snapshot(&snapshot(1, 80.0, vec![], history)).unwrap();

    let text = |s: &mut ControlServer, from: Option<f64>, to: Option<f64>| {
        String::from_utf8(s.export_history(Some(&token), 0.0, Some(SensorKind::Wind), from, to, Vec::new()).unwrap()).unwrap()
    };
    let all = text(&mut s, None, None);
    let lines: Vec<&str> = all.lines().collect();
    assert_eq!(lines[0], "time,kind,value,flags");
    assert_eq!(lines.len(), 1 + 5);
    // the oldest three were evicted
    assert!(lines[1].starts_with("30,"));
    assert_eq!(text(&mut s, Some(1000.0), Some(2000.0)), "time,kind,value,flags\n");
}

fn open(dir: &std::path::Path) -> (ControlServer, Vec<String>) {
    let (mut s, warnings) = ControlServer::open(ServerConfig::default(), SensorKind::ALL.to_vec(), dir).unwrap();
    s.add_user("manager", hash("secret"));
    (s, warnings)
}

#[test]
fn recovery_keeps_ledger_and_drops_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (pending_id, done_id, token) = {
        let (mut s, _) = open(dir.path());
        let token = s.login("manager", "secret", 0.0).unwrap().token;
        let done = s.issue_as("manager", &lake_on(30.0)).unwrap();
        s.dispatch().unwrap();
        let on = ActuatorState { lake_pump: true, ..ActuatorState::default() };
        s.apply_snapshot(&snapshot(1, 5.0, vec![(1, UpstreamEvent::Ack(ack(done.command_id, 5.0, on, true)))], vec![]))
            .unwrap();
        let fin = UpstreamEvent::Completed(Completion { command_id: done.command_id, at: 35.0 });
        s.apply_snapshot(&snapshot(2, 35.0, vec![(2, fin)], vec![])).unwrap();
        let req = IssueRequest { device: "fwgs_water_feed".into(), command: ControlCommand::On, duration_s: Some(100.0), sensor: None };
        let pending = s.issue_as("manager", &req).unwrap();
        (pending.command_id, done.command_id, token)
        // dropped without flush: recovery runs from the log
    };
    let (mut s, warnings) = open(dir.path());
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(s.command(pending_id).unwrap().state, CommandState::Pending);
    assert_eq!(s.command(done_id).unwrap().state, CommandState::Completed);
    assert!(s.authorize(Some(&token), 1.0).is_err());
    let resent: Vec<u64> = s.dispatch().unwrap().iter().map(|c| c.command_id).collect();
    assert_eq!(resent, vec![pending_id]);
    let next = s.issue_as("manager", &lake_on(10.0)).unwrap();
    assert!(next.command_id > pending_id);
}

#[test]
fn torn_final_record_is_dropped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let first = {
        let (mut s, _) = open(dir.path());
        let e = s.issue_as("manager", &lake_on(30.0)).unwrap();
        s.flush().unwrap();
        s.issue_as("manager", &IssueRequest { device: "deep_well_pump".into(), command: ControlCommand::Off, duration_s: None, sensor: None })
            .unwrap();
        e.command_id
    };
    let log = dir.path().join("events.jsonl");
    let mut f = OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(b"{\"seq\": 99, \"rec\": {\"type\": \"iss").unwrap();
    drop(f);

    let (s, warnings) = open(dir.path());
    assert_eq!(warnings.len(), 1, "{warnings:?}");
    assert!(s.command(first).is_some());
    assert_eq!(s.commands().count(), 2);
    // the torn tail was cut off
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.ends_with('\n'));
}

#[test]
fn lockout_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (mut s, _) = open(dir.path());
        for _ in 0..LOCKOUT_THRESHOLD {
            let _ = s.login("manager", "wrong", 0.0);
        }
    }
    let (mut s, _) = open(dir.path());
    assert!(matches!(s.login("manager", "secret", 0.0), Err(ServerError::Auth(AuthError::LockedOut))));
}

#[derive(Debug, Clone)]
enum Op {
    Issue(usize),
    Dispatch,
    Ack(usize, bool),
    Complete(usize),
    Advance(f64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..4).prop_map(Op::Issue),
        Just(Op::Dispatch),
        (0usize..20, any::<bool>()).prop_map(|(i, t)| Op::Ack(i, t)),
        (0usize..20).prop_map(Op::Complete),
        (1.0f64..200.0).prop_map(Op::Advance),
    ]
}

proptest! {
    #[test]
    fn ledger_moves_only_forward(ops in proptest::collection::vec(op(), 1..60)) {
        let devices = ["deep_well_pump", "lake_pump", "fwgs_water_feed", "fwgs_drug_feed"];
        let mut s = server();
        let mut now = 0.0;
        let mut sync = 0;
        let mut seq = 0;
        let mut issued = Vec::new();
        for op in ops {
            match op {
                Op::Issue(d) => {
                    let req = IssueRequest { device: devices[d].into(), command: ControlCommand::On, duration_s: Some(30.0), sensor: None };
                    issued.push(s.issue_as("manager", &req).unwrap().command_id);
                }
                Op::Dispatch => {
                    s.dispatch().unwrap();
                }
                Op::Ack(..) | Op::Complete(_) if issued.is_empty() => {}
                Op::Ack(i, timed) => {
                    let id = issued[i % issued.len()];
                    sync += 1;
                    seq += 1;
                    s.apply_snapshot(&snapshot(sync, now, vec![(seq, UpstreamEvent::Ack(ack(id, now, ActuatorState::default(), timed)))], vec![])).unwrap();
                }
                Op::Complete(i) => {
                    let id = issued[i % issued.len()];
                    sync += 1;
                    seq += 1;
                    s.apply_snapshot(&snapshot(sync, now, vec![(seq, UpstreamEvent::Completed(Completion { command_id: id, at: now }))], vec![])).unwrap();
                }
                Op::Advance(dt) => {
                    now += dt;
                    s.advance(now).unwrap();
                }
            }
            for e in s.commands() {
                for w in e.history.windows(2) {
                    prop_assert!(w[0].state.can_move_to(w[1].state), "{:?}", e.history);
                }
                prop_assert_eq!(e.history.last().unwrap().state, e.state);
            }
            let mut ids: Vec<u64> = s.commands().map(|e| e.command_id).collect();
            ids.sort();
            prop_assert_eq!(&ids, &issued);
        }
    }
}
