use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Injected failure mode of one transducer unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "state", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultState {
    #[default]
    Healthy,
    /// Output frozen. With `at` unset the last healthy output is held.
    Stuck {
        #[serde(default)]
        at: Option<f64>,
    },
    /// Broken lead: the conditioning stage pulls to the full-scale rail.
    OpenCircuit,
}

impl FaultState {
    pub fn is_healthy(&self) -> bool {
        matches!(self, FaultState::Healthy)
    }
}

/// Stateless part of the fault model. `last_healthy` is the memory a stuck
/// unit freezes on.
pub fn apply_fault<R: Rng + ?Sized>(
    volts: f64,
    state: &FaultState,
    last_healthy: Option<f64>,
    noise_sigma: f64,
    vfs: f64,
    rng: &mut R,
) -> f64 {
    match state {
        FaultState::Healthy => {
            if noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                volts + noise_sigma * z
            } else {
                volts
            }
        }
        FaultState::Stuck { at: Some(v) } => *v,
        FaultState::Stuck { at: None } => last_healthy.unwrap_or(volts),
        FaultState::OpenCircuit => vfs,
    }
}

/// Fault state plus the memory it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultModel {
    pub state: FaultState,
    pub noise_sigma: f64,
    pub vfs: f64,
    last_healthy: Option<f64>,
}

impl FaultModel {
    pub fn new(state: FaultState, noise_sigma: f64, vfs: f64) -> Self {
        FaultModel { state, noise_sigma, vfs, last_healthy: None }
    }

    pub fn set_state(&mut self, state: FaultState) {
        self.state = state;
    }

    pub fn last_healthy(&self) -> Option<f64> {
        self.last_healthy
    }

    pub fn apply<R: Rng + ?Sized>(&mut self, volts: f64, rng: &mut R) -> f64 {
        let out = apply_fault(volts, &self.state, self.last_healthy, self.noise_sigma, self.vfs, rng);
        match self.state {
            FaultState::Healthy => self.last_healthy = Some(out),
            // a unit that was never healthy freezes on its first reading
            FaultState::Stuck { at: None } if self.last_healthy.is_none() => self.last_healthy = Some(out),
            _ => {}
        }
        out
    }
}
