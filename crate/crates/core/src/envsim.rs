//! Discrete-time simulator of the plantation site.
//!
//! The simulator produces ground truth for every sensed quantity. All process
//! models are conventions: a two-sinusoid temperature profile, a
//! mean-reverting wind process, a bounded pH walk, Poisson rain and fire
//! ignitions, and a bucket model for the lake, overhead tank and soil.
//!
//! Time origin: `sim_time = 0` is the start of day 0 at the rising seasonal
//! zero crossing (spring). Daylight is the first half of each day cycle.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fieldctl::ActuatorState;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment parameter `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("environment state out of range: {0}")]
    State(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Snapshot of the physical site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvState {
    pub sim_time: f64,
    pub temperature: f64,
    pub soil_moisture: f64,
    pub lake_level: f64,
    pub tank_level: f64,
    pub wind_speed: f64,
    pub ambient_light: f64,
    pub humidity: f64,
    pub soil_ph: f64,
    pub stream_flow: f64,
    pub fire_intensity: f64,
}

impl Default for EnvState {
    fn default() -> Self {
        EnvState {
            sim_time: 0.0,
            temperature: 20.0,
            soil_moisture: 0.35,
            lake_level: 30.0,
            tank_level: 3.0,
            wind_speed: 3.0,
            ambient_light: 0.0,
            humidity: 0.6,
            soil_ph: 6.0,
            stream_flow: 0.4,
            fire_intensity: 0.0,
        }
    }
}

impl EnvState {
    pub fn check(&self, params: &EnvParams) -> Result<(), EnvError> {
        let unit = |name: &str, v: f64| -> Result<(), EnvError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(EnvError::State(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("soil_moisture", self.soil_moisture)?;
        unit("ambient_light", self.ambient_light)?;
        unit("humidity", self.humidity)?;
        unit("fire_intensity", self.fire_intensity)?;
        if !(0.0..=params.lake_depth_max).contains(&self.lake_level) {
            return Err(EnvError::State(format!("lake_level = {}", self.lake_level)));
        }
        if !(0.0..=params.tank_height).contains(&self.tank_level) {
            return Err(EnvError::State(format!("tank_level = {}", self.tank_level)));
        }
        if !(0.0..=14.0).contains(&self.soil_ph) {
            return Err(EnvError::State(format!("soil_ph = {}", self.soil_ph)));
        }
        if self.wind_speed < 0.0 || self.stream_flow < 0.0 || !self.temperature.is_finite() {
            return Err(EnvError::State("negative wind/stream or non-finite temperature".into()));
        }
        Ok(())
    }
}

/// Scenario parameters for the environment processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub rng_seed: u64,
    /// Step length in seconds.
    pub dt: f64,
    /// Hold every quantity constant; only `sim_time` advances.
    pub frozen: bool,

    pub t_mean: f64,
    pub a_season: f64,
    pub a_diurnal: f64,
    pub season_t0: f64,
    pub temp_noise_sigma: f64,
    pub year_length: f64,
    pub day_length: f64,

    pub rain_rate: f64,
    pub rain_moisture: f64,
    pub rain_lake: f64,
    pub rain_stream: f64,
    /// Soil moisture loss, fraction of current moisture per degC per day.
    pub evap_coeff: f64,
    /// Lake inflow in metres per day per degC above zero, spring only.
    pub snowmelt_coeff: f64,

    pub wind_mean: f64,
    /// Mean reversion rate, 1/s.
    pub wind_reversion: f64,
    /// Diffusion, m/s per sqrt(s).
    pub wind_sigma: f64,

    pub humidity_mean: f64,
    pub humidity_diurnal: f64,
    pub humidity_reversion: f64,
    pub humidity_sigma: f64,

    pub ph_min: f64,
    pub ph_max: f64,
    pub ph_step_sigma: f64,

    /// Dry-season ignition rate, events per day at zero humidity.
    pub fire_rate: f64,
    pub fire_jump: f64,
    /// Fraction of fire intensity retained per step.
    pub fire_decay: f64,

    pub stream_base: f64,
    /// Recession time constant of the stream, seconds.
    pub stream_recession: f64,

    pub tank_area: f64,
    pub tank_height: f64,
    pub lake_area: f64,
    pub lake_depth_max: f64,
    pub deep_well_flow: f64,
    pub lake_pump_flow: f64,
    pub sprayer_flow: f64,
    pub feed_flow: f64,
    /// Soil moisture gained per cubic metre delivered to the field.
    pub moisture_per_m3: f64,
    pub moisture_saturation: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            rng_seed: 1,
            dt: 60.0,
            frozen: false,
            t_mean: 20.0,
            a_season: 10.0,
            a_diurnal: 5.0,
            season_t0: 0.0,
            temp_noise_sigma: 0.2,
            year_length: 365.0 * SECONDS_PER_DAY,
            day_length: SECONDS_PER_DAY,
            rain_rate: 0.25,
            rain_moisture: 0.03,
            rain_lake: 0.05,
            rain_stream: 0.4,
            evap_coeff: 0.006,
            snowmelt_coeff: 0.004,
            wind_mean: 3.0,
            wind_reversion: 1.0 / 3600.0,
            wind_sigma: 0.05,
            humidity_mean: 0.6,
            humidity_diurnal: 0.15,
            humidity_reversion: 1.0 / 7200.0,
            humidity_sigma: 0.002,
            ph_min: 4.0,
            ph_max: 8.0,
            ph_step_sigma: 0.002,
            fire_rate: 0.05,
            fire_jump: 0.5,
            fire_decay: 0.95,
            stream_base: 0.3,
            stream_recession: 2.0 * SECONDS_PER_DAY,
            tank_area: 4.0,
            tank_height: 5.0,
            lake_area: 20_000.0,
            lake_depth_max: 50.0,
            deep_well_flow: 0.004,
            lake_pump_flow: 0.005,
            sprayer_flow: 0.002,
            feed_flow: 0.003,
            moisture_per_m3: 0.0005,
            moisture_saturation: 0.6,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("dt", self.dt),
            ("year_length", self.year_length),
            ("day_length", self.day_length),
            ("tank_area", self.tank_area),
            ("tank_height", self.tank_height),
            ("lake_area", self.lake_area),
            ("lake_depth_max", self.lake_depth_max),
            ("stream_recession", self.stream_recession),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::Config { field, reason: format!("must be > 0, got {v}") });
            }
        }
        let non_negative = [
            ("rain_rate", self.rain_rate),
            ("rain_moisture", self.rain_moisture),
            ("rain_lake", self.rain_lake),
            ("rain_stream", self.rain_stream),
            ("evap_coeff", self.evap_coeff),
            ("snowmelt_coeff", self.snowmelt_coeff),
            ("temp_noise_sigma", self.temp_noise_sigma),
            ("wind_mean", self.wind_mean),
            ("wind_reversion", self.wind_reversion),
            ("wind_sigma", self.wind_sigma),
            ("humidity_reversion", self.humidity_reversion),
            ("humidity_sigma", self.humidity_sigma),
            ("ph_step_sigma", self.ph_step_sigma),
            ("fire_rate", self.fire_rate),
            ("fire_jump", self.fire_jump),
            ("stream_base", self.stream_base),
            ("deep_well_flow", self.deep_well_flow),
            ("lake_pump_flow", self.lake_pump_flow),
            ("sprayer_flow", self.sprayer_flow),
            ("feed_flow", self.feed_flow),
            ("moisture_per_m3", self.moisture_per_m3),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EnvError::Config { field, reason: format!("must be >= 0, got {v}") });
            }
        }
        if !(0.0..=1.0).contains(&self.fire_decay) {
            return Err(EnvError::Config { field: "fire_decay", reason: "must lie in [0, 1]".into() });
        }
        if !(0.0..=1.0).contains(&self.moisture_saturation) {
            return Err(EnvError::Config {
                field: "moisture_saturation",
                reason: "must lie in [0, 1]".into(),
            });
        }
        if !(0.0 <= self.ph_min && self.ph_min <= self.ph_max && self.ph_max <= 14.0) {
            return Err(EnvError::Config { field: "ph_min", reason: "need 0 <= ph_min <= ph_max <= 14".into() });
        }
        Ok(())
    }

    /// Noise-free temperature at time `t`.
    pub fn temperature_at(&self, t: f64) -> f64 {
        self.t_mean
            + self.a_season * (2.0 * PI * (t - self.season_t0) / self.year_length).sin()
            + self.a_diurnal * (2.0 * PI * t / self.day_length).sin()
    }

    /// Fraction of the seasonal cycle elapsed at `t`, in [0, 1). Spring is [0, 0.25).
    pub fn season_phase(&self, t: f64) -> f64 {
        ((t - self.season_t0) / self.year_length).rem_euclid(1.0)
    }

    pub fn daylight_at(&self, t: f64) -> f64 {
        (2.0 * PI * t / self.day_length).sin().clamp(0.0, 1.0)
    }
}

/// One ignition inside a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FireEvent {
    pub at: f64,
}

/// Poisson ignitions over `[state.sim_time, state.sim_time + dt)`. The rate is
/// the dry-season rate scaled by `1 - humidity`.
pub fn fire_events<R: Rng + ?Sized>(state: &EnvState, params: &EnvParams, rng: &mut R) -> Vec<FireEvent> {
    let per_second = params.fire_rate / SECONDS_PER_DAY * (1.0 - state.humidity).clamp(0.0, 1.0);
    let lambda = per_second * params.dt;
    if lambda <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(lambda).map(|p| p.sample(rng) as usize).unwrap_or(0);
    let mut events: Vec<FireEvent> = (0..count)
        .map(|_| FireEvent { at: state.sim_time + rng.random::<f64>() * params.dt })
        .collect();
    events.sort_by(|a, b| a.at.total_cmp(&b.at));
    events
}

// Substream ids; each process draws from its own stream of the scenario seed.
const STREAM_TEMPERATURE: u64 = 1;
const STREAM_WIND: u64 = 2;
const STREAM_HUMIDITY: u64 = 3;
const STREAM_PH: u64 = 4;
const STREAM_RAIN: u64 = 5;
const STREAM_FIRE: u64 = 6;

pub(crate) fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stateful stepper: parameters plus the per-process random streams.
#[derive(Debug, Clone)]
pub struct Environment {
    params: EnvParams,
    temperature_rng: ChaCha8Rng,
    wind_rng: ChaCha8Rng,
    humidity_rng: ChaCha8Rng,
    ph_rng: ChaCha8Rng,
    rain_rng: ChaCha8Rng,
    fire_rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(params: EnvParams) -> Result<Self, EnvError> {
        params.validate()?;
        let seed = params.rng_seed;
        Ok(Environment {
            temperature_rng: substream(seed, STREAM_TEMPERATURE),
            wind_rng: substream(seed, STREAM_WIND),
            humidity_rng: substream(seed, STREAM_HUMIDITY),
            ph_rng: substream(seed, STREAM_PH),
            rain_rng: substream(seed, STREAM_RAIN),
            fire_rng: substream(seed, STREAM_FIRE),
            params,
        })
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    /// Advance `state` by one `dt` under the given actuation.
    pub fn step(&mut self, state: &EnvState, actuation: &ActuatorState) -> EnvState {
        let p = &self.params;
        let dt = p.dt;
        let t = state.sim_time + dt;
        let mut next = *state;
        next.sim_time = t;
        if p.frozen {
            return next;
        }

        let noise: f64 = self.temperature_rng.sample(StandardNormal);
        next.temperature = p.temperature_at(t) + p.temp_noise_sigma * noise;

        let z: f64 = self.wind_rng.sample(StandardNormal);
        next.wind_speed = (state.wind_speed
            + p.wind_reversion * (p.wind_mean - state.wind_speed) * dt
            + p.wind_sigma * dt.sqrt() * z)
            .max(0.0);

        let target = p.humidity_mean - p.humidity_diurnal * (2.0 * PI * t / p.day_length).sin();
        let z: f64 = self.humidity_rng.sample(StandardNormal);
        next.humidity = (state.humidity
            + p.humidity_reversion * (target - state.humidity) * dt
            + p.humidity_sigma * dt.sqrt() * z)
            .clamp(0.0, 1.0);

        let z: f64 = self.ph_rng.sample(StandardNormal);
        next.soil_ph = (state.soil_ph + p.ph_step_sigma * z).clamp(p.ph_min, p.ph_max);

        next.ambient_light = p.daylight_at(t);

        let rain = if p.rain_rate > 0.0 {
            Poisson::new(p.rain_rate / SECONDS_PER_DAY * dt)
                .map(|d| d.sample(&mut self.rain_rng))
                .unwrap_or(0.0)
        } else {
            0.0
        };

        let ignitions = fire_events(state, p, &mut self.fire_rng).len() as f64;
        next.fire_intensity = (state.fire_intensity * p.fire_decay + ignitions * p.fire_jump).clamp(0.0, 1.0);

        let flux = hydraulic_flux(state, p, actuation);
        next.tank_level = (state.tank_level + flux.tank_delta(p)).clamp(0.0, p.tank_height);

        let melt = if p.season_phase(t) < 0.25 && next.temperature > 0.0 {
            p.snowmelt_coeff * next.temperature * dt / SECONDS_PER_DAY
        } else {
            0.0
        };
        next.lake_level = (state.lake_level - flux.lake_draw * dt / p.lake_area + rain * p.rain_lake + melt)
            .clamp(0.0, p.lake_depth_max);

        let decay = (-dt / p.stream_recession).exp();
        next.stream_flow = (p.stream_base
            + (state.stream_flow - p.stream_base) * decay
            + rain * p.rain_stream
            + melt * p.lake_area / SECONDS_PER_DAY)
            .max(0.0);

        let evaporation = p.evap_coeff * next.temperature.max(0.0) * state.soil_moisture * dt / SECONDS_PER_DAY;
        next.soil_moisture = (state.soil_moisture + flux.outflow * dt * p.moisture_per_m3 + rain * p.rain_moisture
            - evaporation)
            .clamp(0.0, p.moisture_saturation);

        next
    }
}

/// Volumetric flows in m^3/s during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydraulicFlux {
    pub inflow: f64,
    pub outflow: f64,
    pub lake_draw: f64,
}

impl HydraulicFlux {
    pub fn tank_delta(&self, params: &EnvParams) -> f64 {
        (self.inflow - self.outflow) * params.dt / params.tank_area
    }
}

/// Pumps fill the overhead tank; the sprayer and the feed tap drain it. A pump
/// only delivers if its source holds water, an outlet only if the tank does.
pub fn hydraulic_flux(state: &EnvState, params: &EnvParams, act: &ActuatorState) -> HydraulicFlux {
    let lake_draw = if act.lake_pump && state.lake_level > 0.0 { params.lake_pump_flow } else { 0.0 };
    let well = if act.deep_well_pump { params.deep_well_flow } else { 0.0 };
    let outflow = if state.tank_level > 0.0 {
        (if act.fwgs_water_valve { params.sprayer_flow } else { 0.0 })
            + (if act.feed_tap { params.feed_flow } else { 0.0 })
    } else {
        0.0
    };
    HydraulicFlux { inflow: well + lake_draw, outflow, lake_draw }
}

/// Ground-truth trajectory as CSV, one row per step.
pub fn write_trajectory<W: Write>(out: W, states: &[EnvState]) -> Result<(), EnvError> {
    let mut writer = csv::Writer::from_writer(out);
    for s in states {
        writer.serialize(s)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> EnvParams {
        EnvParams { temp_noise_sigma: 0.0, ..EnvParams::default() }
    }

    #[test]
    fn temperature_at_zero_crossings_is_mean() {
        let p = quiet();
        assert_eq!(p.temperature_at(0.0), 20.0);
    }

    #[test]
    fn temperature_peaks_when_both_sinusoids_peak() {
        let p = quiet();
        let t = p.year_length / 4.0;
        assert_eq!((t % p.day_length), p.day_length / 4.0);
        assert!((p.temperature_at(t) - 35.0).abs() < 1e-9);
    }

    #[test]
    fn sprayer_drains_tank() {
        let mut env = Environment::new(EnvParams { rain_rate: 0.0, ..quiet() }).unwrap();
        let s0 = EnvState::default();
        let act = ActuatorState { fwgs_water_valve: true, ..ActuatorState::default() };
        let s1 = env.step(&s0, &act);
        assert!(s1.tank_level < s0.tank_level);
    }

    #[test]
    fn rejects_non_positive_dt() {
        let err = Environment::new(EnvParams { dt: 0.0, ..EnvParams::default() }).unwrap_err();
        assert!(matches!(err, EnvError::Config { field: "dt", .. }));
        assert!(Environment::new(EnvParams { fire_rate: -1.0, ..EnvParams::default() }).is_err());
    }

    #[test]
    fn zero_rate_or_saturated_air_has_no_fires() {
        let mut rng = substream(7, 99);
        let state = EnvState { humidity: 0.0, ..EnvState::default() };
        let none = EnvParams { fire_rate: 0.0, dt: SECONDS_PER_DAY * 1000.0, ..EnvParams::default() };
        assert!(fire_events(&state, &none, &mut rng).is_empty());
        let wet = EnvState { humidity: 1.0, ..EnvState::default() };
        let busy = EnvParams { fire_rate: 50.0, dt: SECONDS_PER_DAY * 1000.0, ..EnvParams::default() };
        assert!(fire_events(&wet, &busy, &mut rng).is_empty());
    }

    #[test]
    fn frozen_environment_only_advances_time() {
        let mut env = Environment::new(EnvParams { frozen: true, dt: 30.0, ..EnvParams::default() }).unwrap();
        let s0 = EnvState { temperature: 25.5, ..EnvState::default() };
        let act = ActuatorState { lake_pump: true, ..ActuatorState::default() };
        let s1 = env.step(&s0, &act);
        assert_eq!(s1.sim_time, 30.0);
        assert_eq!(EnvState { sim_time: 0.0, ..s1 }, s0);
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &[EnvState::default(), EnvState::default()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("sim_time,temperature,soil_moisture"));
        assert_eq!(lines.count(), 2);
    }
}
