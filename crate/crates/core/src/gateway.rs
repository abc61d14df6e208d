//! Base station: live table, FIFO history, upstream snapshot sync and the
//! downstream command relay.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::fieldctl::{ActuatorState, Completion, FieldAck, FieldCommand};
use crate::fieldnet::{Flags, Frame, TestStatus};
use crate::sensor::SensorKind;

pub const DEFAULT_HISTORY_CAPACITY: usize = 86_400;
const SEQ_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Gateway-wide acceptance counter; identifies the entry upstream.
    pub index: u64,
    pub time: f64,
    pub kind: SensorKind,
    pub value: f32,
    pub flags: Flags,
}

/// Bounded FIFO; the oldest entry is evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer<T> {
    capacity: usize,
    entries: VecDeque<T>,
}

impl<T> HistoryBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        HistoryBuffer { capacity: capacity.max(1), entries: VecDeque::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &T> + ExactSizeIterator {
        self.entries.iter()
    }

    pub fn back(&self) -> Option<&T> {
        self.entries.back()
    }
}

/// Append, evicting the oldest entry when over capacity. Returns the evicted
/// entry.
pub fn fifo_append<T>(buffer: &mut HistoryBuffer<T>, entry: T) -> Option<T> {
    buffer.entries.push_back(entry);
    if buffer.entries.len() > buffer.capacity {
        buffer.entries.pop_front()
    } else {
        None
    }
}

/// One row of the continuously updated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveRow {
    pub node_id: u8,
    pub kind: SensorKind,
    pub last_value: Option<f32>,
    pub last_frame_time: Option<f64>,
    pub last_test_time: Option<f64>,
    pub test_status: TestStatus,
    pub flags: Flags,
}

impl LiveRow {
    fn new(node_id: u8, kind: SensorKind) -> Self {
        LiveRow {
            node_id,
            kind,
            last_value: None,
            last_frame_time: None,
            last_test_time: None,
            test_status: TestStatus::Ok,
            flags: Flags::default(),
        }
    }

    pub fn test_age(&self, now: f64) -> Option<f64> {
        self.last_test_time.map(|t| (now - t).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestOutcome {
    Accepted,
    Duplicate,
    Quarantined,
}

/// Messages travelling gateway -> server besides the table itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UpstreamEvent {
    Ack(FieldAck),
    Completed(Completion),
}

/// Upstream sync message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sync_id: u64,
    pub at: f64,
    pub rows: Vec<LiveRow>,
    pub history: Vec<HistoryEntry>,
    pub field_state: Option<ActuatorState>,
    /// `(event_seq, event)` pairs not yet confirmed by the server.
    pub events: Vec<(u64, UpstreamEvent)>,
}

impl Snapshot {
    pub fn last_history_index(&self) -> Option<u64> {
        self.history.last().map(|h| h.index)
    }

    pub fn last_event_seq(&self) -> Option<u64> {
        self.events.last().map(|(s, _)| *s)
    }
}

/// Server confirmation of an applied snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncAck {
    pub sync_id: u64,
    pub history_upto: Option<u64>,
    pub events_upto: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GatewayCounters {
    pub accepted: u64,
    pub duplicates: u64,
    pub quarantined: u64,
    pub snapshots_dropped: u64,
    pub commands_relayed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gateway {
    rows: Vec<LiveRow>,
    by_node: HashMap<u8, usize>,
    history: BTreeMap<SensorKind, HistoryBuffer<HistoryEntry>>,
    history_capacity: usize,
    recent_seqs: HashMap<u8, VecDeque<u16>>,
    next_index: u64,
    acked_index: Option<u64>,
    next_sync_id: u64,
    outbox: VecDeque<Snapshot>,
    outbox_bound: usize,
    events: VecDeque<(u64, UpstreamEvent)>,
    next_event_seq: u64,
    field_state: Option<ActuatorState>,
    commands: BTreeMap<u64, FieldCommand>,
    counters: GatewayCounters,
}

impl Gateway {
    pub fn new(history_capacity: usize, outbox_bound: usize) -> Self {
        Gateway {
            rows: Vec::new(),
            by_node: HashMap::new(),
            history: BTreeMap::new(),
            history_capacity,
            recent_seqs: HashMap::new(),
            next_index: 0,
            acked_index: None,
            next_sync_id: 1,
            outbox: VecDeque::new(),
            outbox_bound: outbox_bound.max(1),
            events: VecDeque::new(),
            next_event_seq: 1,
            field_state: None,
            commands: BTreeMap::new(),
            counters: GatewayCounters::default(),
        }
    }

    pub fn register(&mut self, node_id: u8, kind: SensorKind) {
        if self.by_node.contains_key(&node_id) {
            return;
        }
        self.by_node.insert(node_id, self.rows.len());
        self.rows.push(LiveRow::new(node_id, kind));
        self.history.entry(kind).or_insert_with(|| HistoryBuffer::new(self.history_capacity));
    }

    pub fn rows(&self) -> &[LiveRow] {
        &self.rows
    }

    pub fn counters(&self) -> GatewayCounters {
        self.counters
    }

    pub fn history(&self, kind: SensorKind) -> Option<&HistoryBuffer<HistoryEntry>> {
        self.history.get(&kind)
    }

    /// Update the live table from one received frame.
    pub fn ingest(&mut self, t: f64, frame: &Frame) -> (IngestOutcome, Option<HistoryEntry>) {
        let Some(&row_idx) = self.by_node.get(&frame.node_id) else {
            self.counters.quarantined += 1;
            return (IngestOutcome::Quarantined, None);
        };
        if frame.kind() != Some(self.rows[row_idx].kind) {
            self.counters.quarantined += 1;
            return (IngestOutcome::Quarantined, None);
        }
        let seqs = self.recent_seqs.entry(frame.node_id).or_default();
        if seqs.contains(&frame.seq) {
            self.counters.duplicates += 1;
            return (IngestOutcome::Duplicate, None);
        }
        seqs.push_back(frame.seq);
        if seqs.len() > SEQ_WINDOW {
            seqs.pop_front();
        }

        let row = &mut self.rows[row_idx];
        row.last_value = Some(frame.value);
        row.last_frame_time = Some(t);
        row.flags = frame.flags;
        row.test_status = TestStatus::from_flags(frame.flags);
        if frame.flags.test_fresh() || row.last_test_time.is_none() {
            row.last_test_time = Some(t);
        }
        let entry =
            HistoryEntry { index: self.next_index, time: t, kind: row.kind, value: frame.value, flags: frame.flags };
        self.next_index += 1;
        let buffer = self.history.entry(row.kind).or_insert_with(|| HistoryBuffer::new(self.history_capacity));
        fifo_append(buffer, entry);
        self.counters.accepted += 1;
        (IngestOutcome::Accepted, Some(entry))
    }

    pub fn report_field_state(&mut self, state: ActuatorState) {
        self.field_state = Some(state);
    }

    pub fn push_upstream(&mut self, event: UpstreamEvent) {
        self.events.push_back((self.next_event_seq, event));
        self.next_event_seq += 1;
    }

    fn unsent_history(&self) -> Vec<HistoryEntry> {
        let mut out: Vec<HistoryEntry> = self
            .history
            .values()
            .flat_map(|b| b.iter().rev().take_while(|e| self.acked_index.is_none_or(|a| e.index > a)))
            .copied()
            .collect();
        out.sort_by_key(|e| e.index);
        out
    }

    /// Build the next snapshot into the outbox. The outbox is bounded; the
    /// oldest unsent snapshot is dropped when full.
    pub fn sync_up(&mut self, t: f64) -> &Snapshot {
        let snapshot = Snapshot {
            sync_id: self.next_sync_id,
            at: t,
            rows: self.rows.clone(),
            history: self.unsent_history(),
            field_state: self.field_state,
            events: self.events.iter().cloned().collect(),
        };
        self.next_sync_id += 1;
        self.outbox.push_back(snapshot);
        if self.outbox.len() > self.outbox_bound {
            self.outbox.pop_front();
            self.counters.snapshots_dropped += 1;
        }
        self.outbox.back().expect("just pushed")
    }

    /// Snapshots waiting for delivery, oldest first.
    pub fn outbox(&self) -> impl Iterator<Item = &Snapshot> {
        self.outbox.iter()
    }

    pub fn outbox_len(&self) -> usize {
        self.outbox.len()
    }

    /// Server confirmed a snapshot: forget it and everything it carried.
    pub fn on_sync_ack(&mut self, ack: SyncAck) {
        self.outbox.retain(|s| s.sync_id > ack.sync_id);
        if let Some(h) = ack.history_upto {
            self.acked_index = Some(self.acked_index.map_or(h, |a| a.max(h)));
        }
        if let Some(e) = ack.events_upto {
            while self.events.front().is_some_and(|(s, _)| *s <= e) {
                self.events.pop_front();
            }
        }
    }

    /// Queue commands handed down by the server. Ids already queued are
    /// ignored; retries of relayed ids are queued again.
    pub fn accept_commands(&mut self, commands: impl IntoIterator<Item = FieldCommand>) {
        for c in commands {
            self.commands.entry(c.command_id).or_insert(c);
        }
    }

    pub fn pending_commands(&self) -> usize {
        self.commands.len()
    }

    /// Deliver queued commands in id order. `deliver` returns `None` when the
    /// field controller is unreachable; the command then stays queued.
    pub fn relay_commands<F>(&mut self, mut deliver: F) -> Vec<FieldAck>
    where
        F: FnMut(&FieldCommand) -> Option<FieldAck>,
    {
        let mut acks = Vec::new();
        while let Some((&id, cmd)) = self.commands.first_key_value() {
            let Some(ack) = deliver(cmd) else { break };
            self.commands.remove(&id);
            self.counters.commands_relayed += 1;
            self.push_upstream(UpstreamEvent::Ack(ack.clone()));
            acks.push(ack);
        }
        acks
    }

    /// Debug dump of the gateway state.
    pub fn dump(&self) -> serde_json::Value {
        serde_json::json!({
            "rows": self.rows,
            "counters": self.counters,
            "history_len": self.history.iter().map(|(k, b)| (k.as_str(), b.len())).collect::<BTreeMap<_, _>>(),
            "outbox": self.outbox.len(),
            "pending_events": self.events.len(),
            "pending_commands": self.commands.keys().collect::<Vec<_>>(),
        })
    }
}

/// History rows as CSV: time, kind, value, flags.
pub struct HistoryCsv<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> HistoryCsv<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["time", "kind", "value", "flags"])?;
        Ok(HistoryCsv { writer })
    }

    pub fn write(&mut self, e: &HistoryEntry) -> csv::Result<()> {
        self.writer.write_record([e.time.to_string(), e.kind.as_str().to_string(), e.value.to_string(), e.flags.0.to_string()])
    }

    pub fn finish(mut self) -> csv::Result<W> {
        self.writer.flush()?;
        self.writer.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldctl::FieldAction;

    fn frame(node_id: u8, kind: SensorKind, seq: u16, value: f32, flags: u8) -> Frame {
        Frame { node_id, sensor_kind: kind.code(), seq, value, flags: Flags(flags) }
    }

    fn gateway() -> Gateway {
        let mut g = Gateway::new(16, 4);
        for k in SensorKind::ALL {
            g.register(k.code(), k);
        }
        g
    }

    #[test]
    fn fifo_semantics() {
        let mut b = HistoryBuffer::new(3);
        fifo_append(&mut b, 'a');
        assert_eq!(b.iter().copied().collect::<String>(), "a");
        for c in ['b', 'c', 'd'] {
            fifo_append(&mut b, c);
        }
        assert_eq!(b.iter().copied().collect::<String>(), "bcd");
    }

    #[test]
    fn fifo_bound_holds() {
        let mut b = HistoryBuffer::new(1000);
        for i in 0..1_000_000u32 {
            fifo_append(&mut b, i);
        }
        assert_eq!(b.len(), 1000);
        assert_eq!(b.iter().next(), Some(&999_000));
    }

    #[test]
    fn ingest_updates_row() {
        let mut g = gateway();
        g.ingest(5.0, &frame(0, SensorKind::Temperature, 1, 25.5, 0));
        let row = &g.rows()[0];
        assert_eq!(row.last_value, Some(25.5));
        assert_eq!(row.test_status, TestStatus::Ok);
        g.ingest(5.0, &frame(2, SensorKind::TankLevel, 1, 2.5, Flags::TEST_ERROR | Flags::STANDBY));
        assert_eq!(g.rows()[2].test_status, TestStatus::Error);
    }

    #[test]
    fn duplicate_seq_is_ignored() {
        let mut g = gateway();
        g.ingest(5.0, &frame(0, SensorKind::Temperature, 7, 25.5, 0));
        let before = g.rows().to_vec();
        let (outcome, _) = g.ingest(10.0, &frame(0, SensorKind::Temperature, 7, 30.0, 0));
        assert_eq!(outcome, IngestOutcome::Duplicate);
        assert_eq!(g.rows(), &before[..]);
        assert_eq!(g.history(SensorKind::Temperature).unwrap().len(), 1);
    }

    #[test]
    fn unknown_node_is_quarantined() {
        let mut g = gateway();
        let before = g.rows().to_vec();
        assert_eq!(g.ingest(1.0, &frame(77, SensorKind::Ph, 0, 5.0, 0)).0, IngestOutcome::Quarantined);
        assert_eq!(g.counters().quarantined, 1);
        assert_eq!(g.rows(), &before[..]);
    }

    #[test]
    fn test_age_tracks_fresh_flag() {
        let mut g = gateway();
        g.ingest(30.0, &frame(0, SensorKind::Temperature, 0, 25.5, Flags::TEST_FRESH));
        g.ingest(60.0, &frame(0, SensorKind::Temperature, 1, 25.5, 0));
        assert_eq!(g.rows()[0].test_age(75.0), Some(45.0));
    }

    #[test]
    fn snapshots_carry_only_unacked_history() {
        let mut g = gateway();
        g.ingest(1.0, &frame(0, SensorKind::Temperature, 0, 20.0, 0));
        g.ingest(2.0, &frame(1, SensorKind::LakeLevel, 0, 40.0, 0));
        let s = g.sync_up(5.0).clone();
        assert_eq!(s.history.len(), 2);
        g.on_sync_ack(SyncAck { sync_id: s.sync_id, history_upto: s.last_history_index(), events_upto: None });
        g.ingest(6.0, &frame(0, SensorKind::Temperature, 1, 21.0, 0));
        let s2 = g.sync_up(10.0);
        assert_eq!(s2.history.iter().map(|h| h.index).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn outbox_is_bounded() {
        let mut g = gateway();
        for i in 0..10 {
            g.sync_up(i as f64 * 5.0);
        }
        assert_eq!(g.outbox_len(), 4);
        assert_eq!(g.counters().snapshots_dropped, 6);
        assert_eq!(g.outbox().next().unwrap().sync_id, 7);
    }

    #[test]
    fn relay_in_id_order_and_hold_when_unreachable() {
        let mut g = gateway();
        let cmd = |id| FieldCommand {
            command_id: id,
            action: FieldAction::SetRelay { actuator: "lake_pump".into(), bit: id % 2 == 0, duration_s: Some(30.0) },
        };
        g.accept_commands([cmd(2), cmd(1)]);
        assert!(g.relay_commands(|_| None).is_empty());
        assert_eq!(g.pending_commands(), 2);
        let mut seen = Vec::new();
        let acks = g.relay_commands(|c| {
            seen.push(c.command_id);
            Some(FieldAck {
                command_id: c.command_id,
                ok: true,
                duplicate: false,
                at: 0.0,
                state: ActuatorState::default(),
                reason: None,
                timed: true,
            })
        });
        assert_eq!(seen, vec![1, 2]);
        assert_eq!(acks.len(), 2);
        assert_eq!(g.sync_up(5.0).events.len(), 2);
    }

    #[test]
    fn history_csv_format() {
        let mut csv = HistoryCsv::new(Vec::new()).unwrap();
        let e = HistoryEntry { index: 0, time: 60.0, kind: SensorKind::Temperature, value: 25.5, flags: Flags(2) };
        csv.write(&e).unwrap();
        let text = String::from_utf8(csv.finish().unwrap()).unwrap();
        assert_eq!(text, "time,kind,value,flags\n60,temperature,25.5,2\n");
    }
}
