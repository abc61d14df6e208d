use serde::{Deserialize, Serialize};

use super::{SignalChain, XducerError};
use crate::sensor::SensorKind;

const ZERO_CELSIUS: f64 = 273.15;
/// 555 astable constant: f = 1.44 / ((R1 + 2 R2) C).
const ASTABLE_K: f64 = 1.44;

// ---------------------------------------------------------------------------
// Capacitive level probe: C -> f -> V
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    /// Probe height, metres.
    pub height: f64,
    /// Dry capacitance, farads.
    pub c0: f64,
    pub eps_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub r1: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub f0: f64,
    /// Volts per hertz.
    pub kd: f64,
    pub vfs: f64,
}

impl ProbeGeometry {
    pub fn capacitance(&self, level: f64) -> f64 {
        self.c0 * (1.0 + (self.eps_r - 1.0) * level / self.height)
    }
}

pub fn oscillator_frequency(capacitance: f64, osc: &Oscillator) -> f64 {
    ASTABLE_K / ((osc.r1 + 2.0 * osc.r2) * capacitance)
}

/// Level -> capacitance -> astable frequency -> discriminator voltage.
pub fn capacitive_chain(
    level: f64,
    geometry: &ProbeGeometry,
    osc: &Oscillator,
    disc: &Discriminator,
) -> Result<f64, XducerError> {
    if !(0.0..=geometry.height).contains(&level) {
        return Err(XducerError::Range { quantity: "level", value: level, lo: 0.0, hi: geometry.height });
    }
    let f = oscillator_frequency(geometry.capacitance(level), osc);
    Ok((disc.kd * (disc.f0 - f)).clamp(0.0, disc.vfs))
}

/// Scenario-file parameters of the capacitive chain. Unset discriminator
/// values are derived so that empty reads 0 V and full reads 98% of Vfs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitiveParams {
    pub height: f64,
    pub c0: f64,
    pub eps_r: f64,
    pub r1: f64,
    pub r2: f64,
    pub f0: Option<f64>,
    pub kd: Option<f64>,
    pub vfs: f64,
}

impl Default for CapacitiveParams {
    fn default() -> Self {
        CapacitiveParams { height: 5.0, c0: 100e-12, eps_r: 80.0, r1: 10e3, r2: 10e3, f0: None, kd: None, vfs: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacitiveChain {
    pub kind: SensorKind,
    pub geometry: ProbeGeometry,
    pub osc: Oscillator,
    pub disc: Discriminator,
}

impl CapacitiveChain {
    pub fn new(kind: SensorKind, p: &CapacitiveParams) -> Result<Self, XducerError> {
        if !(p.height > 0.0 && p.c0 > 0.0 && p.eps_r > 1.0 && p.r1 > 0.0 && p.r2 > 0.0 && p.vfs > 0.0) {
            return Err(XducerError::Config(format!("{kind}: capacitive parameters must be positive, eps_r > 1")));
        }
        let geometry = ProbeGeometry { height: p.height, c0: p.c0, eps_r: p.eps_r };
        let osc = Oscillator { r1: p.r1, r2: p.r2 };
        let f_empty = oscillator_frequency(geometry.capacitance(0.0), &osc);
        let f_full = oscillator_frequency(geometry.capacitance(p.height), &osc);
        let f0 = p.f0.unwrap_or(f_empty);
        let kd = p.kd.unwrap_or(0.98 * p.vfs / (f_empty - f_full));
        if !(kd > 0.0) {
            return Err(XducerError::Config(format!("{kind}: discriminator gain must be > 0")));
        }
        Ok(CapacitiveChain { kind, geometry, osc, disc: Discriminator { f0, kd, vfs: p.vfs } })
    }
}

impl SignalChain for CapacitiveChain {
    fn kind(&self) -> SensorKind {
        self.kind
    }

    fn full_scale(&self) -> f64 {
        self.disc.vfs
    }

    fn band(&self) -> (f64, f64) {
        (0.0, self.geometry.height)
    }

    fn forward(&self, value: f64) -> f64 {
        let level = value.clamp(0.0, self.geometry.height);
        capacitive_chain(level, &self.geometry, &self.osc, &self.disc).unwrap_or(0.0)
    }

    fn inverse(&self, volts: f64) -> f64 {
        let f = self.disc.f0 - volts / self.disc.kd;
        if f <= 0.0 {
            return self.geometry.height;
        }
        let c = ASTABLE_K / ((self.osc.r1 + 2.0 * self.osc.r2) * f);
        let g = &self.geometry;
        (g.height * (c / g.c0 - 1.0) / (g.eps_r - 1.0)).clamp(0.0, g.height)
    }
}

// ---------------------------------------------------------------------------
// Thermistor bridge with parallel linearization resistor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermistorSpec {
    /// Resistance at `t0`, ohms.
    pub r0: f64,
    /// Reference temperature, kelvin.
    pub t0: f64,
    /// Beta constant, kelvin.
    pub b: f64,
    pub r_fixed: f64,
    /// Bridge excitation, volts.
    pub vex: f64,
    /// Parallel linearization resistor, ohms.
    pub r_lin: f64,
}

impl Default for ThermistorSpec {
    /// B = 2500 K with 34 kOhm in parallel keeps the residual against the
    /// best-fit line under 1% of span over 0..50 degC. The fixed arm equals
    /// the linearized thermistor at 25 degC, so the bridge balances mid-band.
    fn default() -> Self {
        let r0 = 10e3;
        let r_lin = 34e3;
        ThermistorSpec { r0, t0: 298.15, b: 2500.0, r_fixed: r0 * r_lin / (r0 + r_lin), vex: 5.0, r_lin }
    }
}

pub fn thermistor_resistance(temp_c: f64, spec: &ThermistorSpec) -> f64 {
    let t = temp_c + ZERO_CELSIUS;
    spec.r0 * (spec.b * (1.0 / t - 1.0 / spec.t0)).exp()
}

/// Bridge output `Vex * (R_eff / (R_eff + R_fixed) - 1/2)` with
/// `R_eff = R_t || R_lin`. Decreasing in temperature (NTC).
pub fn thermistor_bridge(temp_c: f64, spec: &ThermistorSpec) -> f64 {
    let rt = thermistor_resistance(temp_c, spec);
    let r_eff = rt * spec.r_lin / (rt + spec.r_lin);
    spec.vex * (r_eff / (r_eff + spec.r_fixed) - 0.5)
}

/// Scenario-file parameters of the temperature chain. An unset `r_fixed`
/// balances the bridge at the reference temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermistorChainParams {
    pub r0: f64,
    pub t0: f64,
    pub b: f64,
    pub r_fixed: Option<f64>,
    pub vex: f64,
    pub r_lin: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub vfs: f64,
}

impl Default for ThermistorChainParams {
    fn default() -> Self {
        let b = ThermistorSpec::default();
        ThermistorChainParams {
            r0: b.r0,
            t0: b.t0,
            b: b.b,
            r_fixed: None,
            vex: b.vex,
            r_lin: b.r_lin,
            band_lo: -20.0,
            band_hi: 60.0,
            vfs: 5.0,
        }
    }
}

impl ThermistorChainParams {
    pub fn bridge(&self) -> ThermistorSpec {
        let r_fixed = self.r_fixed.unwrap_or(self.r0 * self.r_lin / (self.r0 + self.r_lin));
        ThermistorSpec { r0: self.r0, t0: self.t0, b: self.b, r_fixed, vex: self.vex, r_lin: self.r_lin }
    }
}

/// Bridge followed by an inverting amplifier that maps the band onto
/// 2%..98% of full scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermistorChain {
    pub bridge: ThermistorSpec,
    pub band: (f64, f64),
    pub gain: f64,
    pub offset: f64,
    pub vfs: f64,
}

impl ThermistorChain {
    pub fn new(p: &ThermistorChainParams) -> Result<Self, XducerError> {
        let s = &p.bridge();
        if !(s.r0 > 0.0 && s.t0 > 0.0 && s.b > 0.0 && s.r_fixed > 0.0 && s.vex > 0.0 && s.r_lin > 0.0) {
            return Err(XducerError::Config("thermistor parameters must be positive".into()));
        }
        if !(p.band_lo < p.band_hi && p.band_lo > -ZERO_CELSIUS && p.vfs > 0.0) {
            return Err(XducerError::Config("thermistor band must be increasing above absolute zero".into()));
        }
        let v_lo = thermistor_bridge(p.band_lo, s);
        let v_hi = thermistor_bridge(p.band_hi, s);
        let gain = 0.96 * p.vfs / (v_hi - v_lo);
        let offset = 0.02 * p.vfs - gain * v_lo;
        Ok(ThermistorChain { bridge: *s, band: (p.band_lo, p.band_hi), gain, offset, vfs: p.vfs })
    }
}

impl SignalChain for ThermistorChain {
    fn kind(&self) -> SensorKind {
        SensorKind::Temperature
    }

    fn full_scale(&self) -> f64 {
        self.vfs
    }

    fn band(&self) -> (f64, f64) {
        self.band
    }

    fn forward(&self, value: f64) -> f64 {
        (self.offset + self.gain * thermistor_bridge(value, &self.bridge)).clamp(0.0, self.vfs)
    }

    fn inverse(&self, volts: f64) -> f64 {
        // widen by 20 degC so voltages in the guard bands still calibrate
        let (mut lo, mut hi) = (self.band.0 - 20.0, self.band.1 + 20.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.offset + self.gain * thermistor_bridge(mid, &self.bridge) < volts {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

// ---------------------------------------------------------------------------
// Windmill anemometer
// ---------------------------------------------------------------------------

/// `kw * min(wind_speed, cutout)`.
pub fn windmill(wind_speed: f64, kw: f64, cutout: f64) -> f64 {
    kw * wind_speed.max(0.0).min(cutout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindmillChain {
    /// Volts per m/s.
    pub kw: f64,
    pub cutout: f64,
    pub vfs: f64,
}

impl Default for WindmillChain {
    fn default() -> Self {
        WindmillChain { kw: 0.1, cutout: 40.0, vfs: 5.0 }
    }
}

impl WindmillChain {
    pub fn validate(&self) -> Result<(), XducerError> {
        if !(self.kw > 0.0 && self.cutout > 0.0 && self.vfs > 0.0) {
            return Err(XducerError::Config("windmill kw, cutout and vfs must be > 0".into()));
        }
        Ok(())
    }
}

impl SignalChain for WindmillChain {
    fn kind(&self) -> SensorKind {
        SensorKind::Wind
    }

    fn full_scale(&self) -> f64 {
        self.vfs
    }

    fn band(&self) -> (f64, f64) {
        (0.0, self.cutout)
    }

    fn forward(&self, value: f64) -> f64 {
        windmill(value, self.kw, self.cutout).min(self.vfs)
    }

    fn inverse(&self, volts: f64) -> f64 {
        (volts / self.kw).clamp(0.0, self.cutout)
    }
}

// ---------------------------------------------------------------------------
// Affine chains (hygrometer, pH, light, smoke, flow, moisture)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineParams {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub vfs: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        AffineParams { lo: None, hi: None, vfs: 5.0 }
    }
}

/// `V = offset + gain * x`, mapping `[lo, hi]` onto `[0, Vfs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineChain {
    pub kind: SensorKind,
    pub lo: f64,
    pub hi: f64,
    pub gain: f64,
    pub offset: f64,
    pub vfs: f64,
}

impl AffineChain {
    pub fn default_band(kind: SensorKind) -> (f64, f64) {
        match kind {
            SensorKind::Ph => (0.0, 14.0),
            SensorKind::StreamFlow => (0.0, 5.0),
            SensorKind::Temperature => (-20.0, 60.0),
            SensorKind::LakeLevel => (0.0, 50.0),
            SensorKind::TankLevel => (0.0, 5.0),
            SensorKind::Wind => (0.0, 40.0),
            _ => (0.0, 1.0),
        }
    }

    pub fn new(kind: SensorKind, p: &AffineParams) -> Result<Self, XducerError> {
        let (dlo, dhi) = Self::default_band(kind);
        let (lo, hi) = (p.lo.unwrap_or(dlo), p.hi.unwrap_or(dhi));
        if !(lo < hi && p.vfs > 0.0) {
            return Err(XducerError::Config(format!("{kind}: affine band must be increasing, vfs > 0")));
        }
        let gain = p.vfs / (hi - lo);
        Ok(AffineChain { kind, lo, hi, gain, offset: -gain * lo, vfs: p.vfs })
    }
}

impl SignalChain for AffineChain {
    fn kind(&self) -> SensorKind {
        self.kind
    }

    fn full_scale(&self) -> f64 {
        self.vfs
    }

    fn band(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn forward(&self, value: f64) -> f64 {
        (self.offset + self.gain * value).clamp(0.0, self.vfs)
    }

    fn inverse(&self, volts: f64) -> f64 {
        (volts - self.offset) / self.gain
    }
}
