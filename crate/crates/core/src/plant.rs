//! Single-process wiring of the site: environment, sensor nodes, radio
//! link, gateway, control server and field controller, advanced on one
//! integer-second clock.
//!
//! Order of work inside a tick `t`:
//!
//! 1. environment step (every `dt`, from the second tick on)
//! 2. scheduled transducer faults
//! 3. self-tests (every test period, including `t = 0`)
//! 4. sampling and transmission (every sample period)
//! 5. frames due by `t` reach the gateway
//! 6. scripted commands due by `t` are issued
//! 7. field controller tick
//! 8. on sync ticks: server clock, command dispatch and relay, snapshot upload

use std::sync::Arc;

use crate::config::{LinkPath, LoadedScenario, ScriptedCommand};
use crate::ctrlserver::{ControlServer, ServerError};
use crate::envsim::{substream, EnvError, EnvState, Environment};
use crate::fieldctl::{
    ActuationRecord, CommandOutcome, FieldAck, FieldCommand, FieldController, FieldError, FieldInputs, Schedule,
    ScheduleEntry,
};
use crate::fieldnet::{Channel, ChannelConfigError, SensorNode};
use crate::gateway::{Gateway, HistoryEntry, IngestOutcome, UpstreamEvent};
use crate::sensor::SensorKind;
use crate::xducer::SignalChain;

const STREAM_NODE_BASE: u64 = 100;
const STREAM_CHANNEL: u64 = 200;

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Channel(#[from] ChannelConfigError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub struct Plant {
    scenario: LoadedScenario,
    env: Environment,
    env_state: EnvState,
    nodes: Vec<SensorNode>,
    channel: Channel,
    gateway: Gateway,
    server: ControlServer,
    field: FieldController,
    quantum: u64,
    dt: u64,
    next_tick: u64,
    last_tick: Option<u64>,
    script: Vec<ScriptedCommand>,
    next_script: usize,
    record_history: bool,
    history_out: Vec<HistoryEntry>,
    actuation_out: Vec<ActuationRecord>,
}

impl std::fmt::Debug for Plant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Plant").field("scenario", &self.scenario.scenario.name).field("next_tick", &self.next_tick).finish()
    }
}

impl Plant {
    /// Wire a validated scenario to `server`.
    pub fn new(loaded: &LoadedScenario, server: ControlServer) -> Result<Plant, PlantError> {
        let sc = &loaded.scenario;
        let mut env_params = sc.env.clone();
        env_params.rng_seed = sc.seed;
        let env = Environment::new(env_params)?;
        let mut env_state = sc.initial;
        env_state.sim_time = 0.0;
        env_state.check(env.params())?;

        let mut gateway = Gateway::new(sc.gateway.history_capacity, sc.gateway.outbox_bound);
        let mut nodes = Vec::with_capacity(SensorKind::ALL.len());
        for kind in SensorKind::ALL {
            let cfg = loaded.sensor(kind);
            let chain: Arc<dyn SignalChain> = loaded.chains[&kind].clone();
            let id = kind.code();
            let rng = substream(sc.seed, STREAM_NODE_BASE + u64::from(id));
            nodes.push(SensorNode::new(id, chain, sc.adc, cfg.noise_sigma, cfg.epsilon_frac, cfg.faults, rng));
            gateway.register(id, kind);
        }
        let channel = Channel::new(sc.channel.clone(), substream(sc.seed, STREAM_CHANNEL))?;

        let t = &sc.timing;
        let dt = sc.env.dt as u64;
        let quantum = [dt, t.sample_period_s, t.test_period_s].into_iter().fold(t.sync_period_s, gcd);
        let mut script = sc.commands.clone();
        script.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));

        Ok(Plant {
            scenario: loaded.clone(),
            env,
            env_state,
            nodes,
            channel,
            gateway,
            server,
            field: FieldController::new(loaded.control_plan()),
            quantum,
            dt,
            next_tick: 0,
            last_tick: None,
            script,
            next_script: 0,
            record_history: false,
            history_out: Vec::new(),
            actuation_out: Vec::new(),
        })
    }

    /// Plant with an in-memory server and no users.
    pub fn in_memory(loaded: &LoadedScenario) -> Result<Plant, PlantError> {
        let server = ControlServer::new(loaded.scenario.server.clone(), SensorKind::ALL.to_vec());
        Plant::new(loaded, server)
    }

    /// Keep every accepted history entry for [`Plant::take_history`].
    pub fn record_history(&mut self, on: bool) {
        self.record_history = on;
    }

    pub fn scenario(&self) -> &LoadedScenario {
        &self.scenario
    }

    pub fn quantum(&self) -> u64 {
        self.quantum
    }

    /// Time of the last processed tick.
    pub fn now(&self) -> Option<f64> {
        self.last_tick.map(|t| t as f64)
    }

    pub fn env_state(&self) -> &EnvState {
        &self.env_state
    }

    pub fn nodes(&self) -> &[SensorNode] {
        &self.nodes
    }

    pub fn node(&self, kind: SensorKind) -> &SensorNode {
        &self.nodes[kind.code() as usize]
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn server(&self) -> &ControlServer {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut ControlServer {
        &mut self.server
    }

    pub fn field(&self) -> &FieldController {
        &self.field
    }

    pub fn take_history(&mut self) -> Vec<HistoryEntry> {
        std::mem::take(&mut self.history_out)
    }

    pub fn take_actuation(&mut self) -> Vec<ActuationRecord> {
        std::mem::take(&mut self.actuation_out)
    }

    /// Replace the daily irrigation schedule on the field controller.
    pub fn update_schedule(&mut self, entries: Vec<ScheduleEntry>) -> Result<(), PlantError> {
        let schedule = Schedule::new(entries, self.field.plan.schedule.day_length)?;
        self.field.plan.schedule = schedule;
        Ok(())
    }

    /// Process every tick up to and including `t_end`.
    pub fn run_until(&mut self, t_end: f64) -> Result<(), PlantError> {
        while (self.next_tick as f64) <= t_end {
            self.step()?;
        }
        Ok(())
    }

    /// Process one tick.
    pub fn step(&mut self) -> Result<(), PlantError> {
        let t = self.next_tick;
        let tf = t as f64;
        let timing = self.scenario.scenario.timing.clone();

        if t > 0 && t % self.dt == 0 {
            self.env_state = self.env.step(&self.env_state, &self.field.state());
        }
        for node in &mut self.nodes {
            node.inject_due_faults(tf);
        }
        if t % timing.test_period_s == 0 {
            for node in &mut self.nodes {
                node.self_test(&self.env_state, tf);
            }
        }
        if t % timing.sample_period_s == 0 {
            for node in &mut self.nodes {
                let frame = node.sample_and_emit(&self.env_state);
                self.channel.send(&frame, tf);
            }
        }
        for (at, frame) in self.channel.deliver_until(tf) {
            if let (IngestOutcome::Accepted, Some(entry)) = self.gateway.ingest(at, &frame) {
                if self.record_history {
                    self.history_out.push(entry);
                }
            }
        }
        while let Some(cmd) = self.script.get(self.next_script) {
            if cmd.at_s > tf {
                break;
            }
            let req = cmd.request();
            self.next_script += 1;
            if let Err(e) = self.server.issue_as("scenario", &req) {
                log::warn!("scripted command at {tf}: {e}");
            }
        }

        let inputs = self.field_inputs();
        self.field.tick(tf, &inputs);

        if t % timing.sync_period_s == 0 {
            self.sync(tf)?;
        }
        for c in self.field.take_completions() {
            self.gateway.push_upstream(UpstreamEvent::Completed(c));
        }
        self.actuation_out.extend(self.field.take_log());

        self.last_tick = Some(t);
        self.next_tick = t + self.quantum;
        Ok(())
    }

    fn field_inputs(&self) -> FieldInputs {
        let value = |kind: SensorKind| {
            self.gateway.rows().iter().find(|r| r.kind == kind).and_then(|r| r.last_value).map(f64::from)
        };
        FieldInputs {
            moisture: value(SensorKind::Moisture),
            lake_level: value(SensorKind::LakeLevel),
            tank_level: value(SensorKind::TankLevel),
            ..FieldInputs::default()
        }
    }

    fn sync(&mut self, t: f64) -> Result<(), PlantError> {
        let link = &self.scenario.scenario.link;
        let upstream = link.up(LinkPath::Upstream, t);
        let field_up = link.up(LinkPath::Field, t);

        self.server.advance(t)?;
        if upstream {
            let commands = self.server.dispatch()?;
            self.gateway.accept_commands(commands);
        }
        let field = &mut self.field;
        let nodes = &mut self.nodes;
        self.gateway.relay_commands(|cmd| field_up.then(|| deliver(field, nodes, t, cmd)));
        for c in self.field.take_completions() {
            self.gateway.push_upstream(UpstreamEvent::Completed(c));
        }
        self.gateway.report_field_state(self.field.state());
        self.gateway.sync_up(t);
        if upstream {
            let pending: Vec<_> = self.gateway.outbox().cloned().collect();
            for snapshot in pending {
                let ack = self.server.apply_snapshot(&snapshot)?;
                self.gateway.on_sync_ack(ack);
            }
        }
        Ok(())
    }
}

/// Hand one relayed command to the field controller. Standby switching
/// lands on the node that owns the named sensor.
fn deliver(field: &mut FieldController, nodes: &mut [SensorNode], t: f64, cmd: &FieldCommand) -> FieldAck {
    match field.handle_command(t, cmd) {
        CommandOutcome::Ack(ack) => ack,
        CommandOutcome::ConnectStandby { mut ack, sensor } => {
            let node = sensor.parse::<SensorKind>().ok().and_then(|k| nodes.iter_mut().find(|n| n.kind() == k));
            match node {
                None => {
                    ack.ok = false;
                    ack.reason = Some(format!("no node for sensor `{sensor}`"));
                }
                Some(node) => {
                    if let Err(e) = node.state.connect_standby() {
                        ack.ok = false;
                        ack.reason = Some(e.to_string());
                    }
                }
            }
            ack
        }
    }
}
