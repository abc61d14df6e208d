//! Sensor kinds shared by the transducer models, the wire protocol and the
//! control plane.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envsim::EnvState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Temperature,
    LakeLevel,
    TankLevel,
    Wind,
    Moisture,
    Ph,
    Humidity,
    FireSmoke,
    StreamFlow,
    Light,
}

impl SensorKind {
    /// Status-window order.
    pub const ALL: [SensorKind; 10] = [
        SensorKind::Temperature,
        SensorKind::LakeLevel,
        SensorKind::TankLevel,
        SensorKind::Wind,
        SensorKind::Moisture,
        SensorKind::Ph,
        SensorKind::Humidity,
        SensorKind::FireSmoke,
        SensorKind::StreamFlow,
        SensorKind::Light,
    ];

    /// Wire code carried in the frame's `sensor_kind` byte.
    pub fn code(self) -> u8 {
        match self {
            SensorKind::Temperature => 0,
            SensorKind::LakeLevel => 1,
            SensorKind::TankLevel => 2,
            SensorKind::Wind => 3,
            SensorKind::Moisture => 4,
            SensorKind::Ph => 5,
            SensorKind::Humidity => 6,
            SensorKind::FireSmoke => 7,
            SensorKind::StreamFlow => 8,
            SensorKind::Light => 9,
        }
    }

    pub fn from_code(code: u8) -> Option<SensorKind> {
        SensorKind::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Temperature => "temperature",
            SensorKind::LakeLevel => "lake_level",
            SensorKind::TankLevel => "tank_level",
            SensorKind::Wind => "wind",
            SensorKind::Moisture => "moisture",
            SensorKind::Ph => "ph",
            SensorKind::Humidity => "humidity",
            SensorKind::FireSmoke => "fire_smoke",
            SensorKind::StreamFlow => "stream_flow",
            SensorKind::Light => "light",
        }
    }

    /// Name shown in the manager's status window.
    pub fn display_name(self) -> &'static str {
        match self {
            SensorKind::Temperature => "Temperature",
            SensorKind::LakeLevel => "Water level in lake",
            SensorKind::TankLevel => "Water level in overhead tank",
            SensorKind::Wind => "Wind flow",
            SensorKind::Moisture => "Moisture contents of the soil",
            SensorKind::Ph => "pH value of the soil",
            SensorKind::Humidity => "Humidity",
            SensorKind::FireSmoke => "Fire and smoke",
            SensorKind::StreamFlow => "Water flow in stream",
            SensorKind::Light => "Light sensor",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SensorKind::Temperature => "degC",
            SensorKind::LakeLevel | SensorKind::TankLevel => "m",
            SensorKind::Wind => "m/s",
            SensorKind::Moisture | SensorKind::Humidity | SensorKind::FireSmoke | SensorKind::Light => {
                "fraction"
            }
            SensorKind::Ph => "pH",
            SensorKind::StreamFlow => "m3/s",
        }
    }

    /// Ground-truth quantity this sensor observes.
    pub fn truth(self, env: &EnvState) -> f64 {
        match self {
            SensorKind::Temperature => env.temperature,
            SensorKind::LakeLevel => env.lake_level,
            SensorKind::TankLevel => env.tank_level,
            SensorKind::Wind => env.wind_speed,
            SensorKind::Moisture => env.soil_moisture,
            SensorKind::Ph => env.soil_ph,
            SensorKind::Humidity => env.humidity,
            SensorKind::FireSmoke => env.fire_intensity,
            SensorKind::StreamFlow => env.stream_flow,
            SensorKind::Light => env.ambient_light,
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown sensor kind `{0}`")]
pub struct UnknownSensor(pub String);

impl FromStr for SensorKind {
    type Err = UnknownSensor;

    /// Accepts the snake_case key or the status-window display name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        SensorKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == trimmed || k.display_name().eq_ignore_ascii_case(trimmed))
            .or_else(|| match trimmed.to_ascii_lowercase().as_str() {
                "overhead water sensor" | "over head water sensor" | "tank" => Some(SensorKind::TankLevel),
                "lake" => Some(SensorKind::LakeLevel),
                _ => None,
            })
            .ok_or_else(|| UnknownSensor(s.to_string()))
    }
}
