//! Sensor node runtime: primary/standby units, periodic self-test, failover.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::{Flags, Frame};
use crate::envsim::EnvState;
use crate::sensor::SensorKind;
use crate::xducer::{measure, AdcSpec, FaultModel, FaultState, Measurement, SignalChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Primary,
    Standby,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestStatus {
    #[serde(rename = "OK")]
    Ok,
    Error,
    NeedsReplacement,
}

impl TestStatus {
    pub fn label(self) -> &'static str {
        match self {
            TestStatus::Ok => "OK",
            TestStatus::Error => "Error",
            TestStatus::NeedsReplacement => "NeedsReplacement",
        }
    }

    pub fn from_flags(flags: Flags) -> TestStatus {
        if flags.needs_replacement() {
            TestStatus::NeedsReplacement
        } else if flags.test_error() {
            TestStatus::Error
        } else {
            TestStatus::Ok
        }
    }
}

/// Pass/fail of each unit in one self-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestOutcome {
    pub primary_ok: bool,
    pub standby_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum NodeError {
    #[error("no primary failure recorded; standby cannot be connected")]
    NoPrimaryFailure,
}

/// Failover state of one node.
///
/// A failed primary hands over to the standby and the status latches at
/// `Error` until the manager confirms the standby; a failed standby means
/// both units must be replaced on site. The node never returns to its
/// primary within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub node_id: u8,
    pub kind: SensorKind,
    pub active_unit: Unit,
    pub test_status: TestStatus,
    pub last_test_time: Option<f64>,
    pub seq: u16,
    pub primary_failed: bool,
    pub standby_failed: bool,
    pub standby_confirmed: bool,
    pub tested_since_frame: bool,
}

impl NodeState {
    pub fn new(node_id: u8, kind: SensorKind) -> Self {
        NodeState {
            node_id,
            kind,
            active_unit: Unit::Primary,
            test_status: TestStatus::Ok,
            last_test_time: None,
            seq: 0,
            primary_failed: false,
            standby_failed: false,
            standby_confirmed: false,
            tested_since_frame: false,
        }
    }

    pub fn flags(&self) -> Flags {
        Flags::default()
            .with(Flags::STANDBY, self.active_unit == Unit::Standby)
            .with(Flags::TEST_ERROR, self.test_status == TestStatus::Error)
            .with(Flags::NEEDS_REPLACEMENT, self.test_status == TestStatus::NeedsReplacement)
            .with(Flags::TEST_FRESH, self.tested_since_frame)
    }

    /// Apply one self-test result.
    pub fn apply_test(&mut self, outcome: TestOutcome, t: f64) {
        self.last_test_time = Some(t);
        self.tested_since_frame = true;
        if self.test_status == TestStatus::NeedsReplacement {
            return;
        }
        match self.active_unit {
            Unit::Primary => {
                if outcome.primary_ok {
                    if outcome.standby_ok {
                        self.test_status = TestStatus::Ok;
                    } else {
                        self.standby_failed = true;
                        self.test_status = TestStatus::Error;
                    }
                } else {
                    self.primary_failed = true;
                    self.active_unit = Unit::Standby;
                    if !outcome.standby_ok || self.standby_failed {
                        self.standby_failed = true;
                        self.test_status = TestStatus::NeedsReplacement;
                    } else {
                        self.test_status = TestStatus::Error;
                    }
                }
            }
            Unit::Standby => {
                if outcome.standby_ok {
                    self.test_status =
                        if self.standby_confirmed { TestStatus::Ok } else { TestStatus::Error };
                } else {
                    self.standby_failed = true;
                    self.test_status = TestStatus::NeedsReplacement;
                }
            }
        }
    }

    /// Manager's connect-standby command.
    pub fn connect_standby(&mut self) -> Result<(), NodeError> {
        if !self.primary_failed {
            return Err(NodeError::NoPrimaryFailure);
        }
        self.active_unit = Unit::Standby;
        self.standby_confirmed = true;
        Ok(())
    }

    fn next_seq(&mut self) -> u16 {
        let seq = self.seq;
        self.seq = self.seq.wrapping_add(1);
        seq
    }
}

/// Fault injected into one unit at a scheduled time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledFault {
    pub unit: Unit,
    #[serde(default)]
    pub at_s: f64,
    pub fault: FaultState,
}

/// A node with its two transducer units.
#[derive(Debug)]
pub struct SensorNode {
    pub state: NodeState,
    chain: Arc<dyn SignalChain>,
    adc: AdcSpec,
    primary: FaultModel,
    standby: FaultModel,
    /// Self-test acceptance band, engineering units.
    epsilon: f64,
    faults: Vec<ScheduledFault>,
    rng: ChaCha8Rng,
}

impl SensorNode {
    pub fn new(
        node_id: u8,
        chain: Arc<dyn SignalChain>,
        adc: AdcSpec,
        noise_sigma: f64,
        epsilon_frac: f64,
        mut faults: Vec<ScheduledFault>,
        rng: ChaCha8Rng,
    ) -> Self {
        let vfs = chain.full_scale();
        let (lo, hi) = chain.band();
        faults.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        SensorNode {
            state: NodeState::new(node_id, chain.kind()),
            primary: FaultModel::new(FaultState::Healthy, noise_sigma, vfs),
            standby: FaultModel::new(FaultState::Healthy, noise_sigma, vfs),
            epsilon: epsilon_frac * (hi - lo),
            adc,
            chain,
            faults,
            rng,
        }
    }

    pub fn kind(&self) -> SensorKind {
        self.state.kind
    }

    pub fn chain(&self) -> &Arc<dyn SignalChain> {
        &self.chain
    }

    pub fn adc(&self) -> &AdcSpec {
        &self.adc
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_fault(&mut self, unit: Unit, fault: FaultState) {
        match unit {
            Unit::Primary => self.primary.set_state(fault),
            Unit::Standby => self.standby.set_state(fault),
        }
    }

    pub fn fault(&self, unit: Unit) -> FaultState {
        match unit {
            Unit::Primary => self.primary.state,
            Unit::Standby => self.standby.state,
        }
    }

    /// Activate scheduled faults whose time has come.
    pub fn inject_due_faults(&mut self, t: f64) {
        while let Some(f) = self.faults.first().copied() {
            if f.at_s > t {
                break;
            }
            self.faults.remove(0);
            self.set_fault(f.unit, f.fault);
        }
    }

    fn read(&mut self, unit: Unit, truth: f64) -> Measurement {
        let model = match unit {
            Unit::Primary => &mut self.primary,
            Unit::Standby => &mut self.standby,
        };
        measure(self.chain.as_ref(), &self.adc, model, truth, &mut self.rng)
    }

    /// Reads the active unit and encodes the reading with the current flags.
    pub fn sample_and_emit(&mut self, env: &EnvState) -> Frame {
        let truth = self.kind().truth(env);
        let reading = self.read(self.state.active_unit, truth);
        let flags = self.state.flags();
        self.state.tested_since_frame = false;
        Frame {
            node_id: self.state.node_id,
            sensor_kind: self.kind().code(),
            seq: self.state.next_seq(),
            value: reading.value as f32,
            flags,
        }
    }

    /// Samples both units against the ground truth and advances the failover
    /// state. A unit passes when it reads within `epsilon` of the truth.
    pub fn self_test(&mut self, env: &EnvState, t: f64) -> TestOutcome {
        let truth = self.kind().truth(env);
        let p = self.read(Unit::Primary, truth);
        let s = self.read(Unit::Standby, truth);
        let outcome = TestOutcome {
            primary_ok: (p.value - truth).abs() <= self.epsilon,
            standby_ok: (s.value - truth).abs() <= self.epsilon,
        };
        self.state.apply_test(outcome, t);
        outcome
    }
}
