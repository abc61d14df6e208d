//! Transducer signal chains: ground truth -> conditioned volts -> ADC code ->
//! engineering units.
//!
//! Each chain variant implements [`SignalChain`] and is registered by name in
//! [`ChainRegistry`]; the scenario file selects a chain per sensor.

mod adc;
mod chains;
mod fault;
mod registry;

use std::fmt;

pub use adc::{adc_decode, adc_quantize, AdcSpec};
pub use chains::{
    capacitive_chain, oscillator_frequency, thermistor_bridge, thermistor_resistance, windmill, AffineChain,
    CapacitiveChain, CapacitiveParams, Discriminator, Oscillator, ProbeGeometry, ThermistorChain, ThermistorSpec,
    WindmillChain,
};
pub use fault::{apply_fault, FaultModel, FaultState};
pub use registry::{ChainFactory, ChainRegistry};

use crate::sensor::SensorKind;

#[derive(Debug, thiserror::Error)]
pub enum XducerError {
    #[error("{quantity} = {value} outside [{lo}, {hi}]")]
    Range { quantity: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("invalid transducer configuration: {0}")]
    Config(String),
    #[error("unknown signal chain `{0}`")]
    UnknownChain(String),
}

/// Physical conditioning chain of one transducer type.
pub trait SignalChain: fmt::Debug + Send + Sync {
    fn kind(&self) -> SensorKind;

    /// Full-scale output voltage of the conditioning stage.
    fn full_scale(&self) -> f64;

    /// Operating band in engineering units.
    fn band(&self) -> (f64, f64);

    /// Noise-free conditioned voltage for a physical input. Monotone
    /// non-decreasing over the band.
    fn forward(&self, value: f64) -> f64;

    /// Calibration: the engineering value that produces `volts`.
    fn inverse(&self, volts: f64) -> f64;

    /// Engineering-unit width of the ADC code containing `value`.
    fn resolution_at(&self, value: f64, adc: &AdcSpec) -> f64 {
        let code = adc_quantize(self.forward(value), adc);
        let lo = self.inverse(code as f64 * adc.lsb());
        let hi = self.inverse((code as f64 + 1.0) * adc.lsb());
        (hi - lo).abs()
    }
}

/// Result of one read of a transducer unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub volts: f64,
    pub code: u32,
    pub value: f64,
}

/// Truth -> chain -> fault/noise -> ADC -> calibration.
pub fn measure<R: rand::Rng + ?Sized>(
    chain: &dyn SignalChain,
    adc: &AdcSpec,
    fault: &mut FaultModel,
    truth: f64,
    rng: &mut R,
) -> Measurement {
    let clean = chain.forward(truth);
    let volts = fault.apply(clean, rng);
    let code = adc_quantize(volts, adc);
    let value = chain.inverse(adc_decode(code, adc));
    Measurement { volts, code, value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn measure_with_healthy_chain_is_within_one_code() {
        let registry = ChainRegistry::builtin();
        let adc = AdcSpec { bits: 12, vfs: 5.0 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for kind in SensorKind::ALL {
            let chain = registry.default_for(kind).unwrap();
            let mut fault = FaultModel::new(FaultState::Healthy, 0.0, chain.full_scale());
            let (lo, hi) = chain.band();
            let x = lo + 0.37 * (hi - lo);
            let m = measure(chain.as_ref(), &adc, &mut fault, x, &mut rng);
            let tol = chain.resolution_at(x, &adc);
            assert!((m.value - x).abs() <= tol, "{kind}: {} vs {x} (tol {tol})", m.value);
        }
    }
}
