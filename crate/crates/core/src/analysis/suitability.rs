//! Crop ranking from a seasonal summary and a rule table.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::summary::SeasonalSummary;
use super::AnalysisError;
use crate::sensor::SensorKind;

pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Which summary figure a rule reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    #[default]
    Mean,
    Min,
    Max,
    P10,
    P90,
}

/// A sensor statistic or one of the derived yearly figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Parameter {
    Derived(Derived),
    Sensor(SensorKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derived {
    FrostDays,
    FireEvents,
    WaterAvailability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub parameter: Parameter,
    #[serde(default)]
    pub stat: Stat,
    /// Full membership inside `[ideal[0], ideal[1]]`.
    pub ideal: [f64; 2],
    /// Membership reaches zero at these hard limits.
    pub limits: [f64; 2],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRules {
    pub name: String,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTable {
    pub crop: Vec<CropRules>,
}

impl RuleTable {
    pub fn from_toml(text: &str) -> Result<RuleTable, AnalysisError> {
        let table: RuleTable = toml::from_str(text).map_err(|e| AnalysisError::Config(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.crop.is_empty() {
            return Err(AnalysisError::Config("rule table lists no crops".into()));
        }
        for c in &self.crop {
            let total: f64 = c.rules.iter().map(|r| r.weight).sum();
            if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(AnalysisError::Config(format!("crop `{}`: weights sum to {total}, not 1", c.name)));
            }
            for r in &c.rules {
                let [lo, hi] = r.ideal;
                let [llo, lhi] = r.limits;
                if !(llo <= lo && lo <= hi && hi <= lhi) || r.weight < 0.0 {
                    return Err(AnalysisError::Config(format!(
                        "crop `{}`: rule for {:?} needs limits[0] <= ideal[0] <= ideal[1] <= limits[1] and weight >= 0",
                        c.name, r.parameter
                    )));
                }
            }
        }
        Ok(())
    }
}

/// 1 inside the ideal band, falling linearly to 0 at the hard limits.
pub fn band_membership(x: f64, ideal: [f64; 2], limits: [f64; 2]) -> f64 {
    let [lo, hi] = ideal;
    let [llo, lhi] = limits;
    if x >= lo && x <= hi {
        1.0
    } else if x < lo {
        if x <= llo || lo == llo {
            0.0
        } else {
            (x - llo) / (lo - llo)
        }
    } else if x >= lhi || hi == lhi {
        0.0
    } else {
        (lhi - x) / (lhi - hi)
    }
}

/// Season-wide value of a rule's parameter: the mean of monthly figures,
/// except min/max which take the extreme month. Derived counts are totals.
pub fn parameter_value(summary: &SeasonalSummary, parameter: Parameter, stat: Stat) -> Option<f64> {
    match parameter {
        Parameter::Sensor(kind) => {
            let vals: Vec<f64> = summary
                .cells_for(kind)
                .map(|c| match stat {
                    Stat::Mean => c.mean,
                    Stat::Min => c.min,
                    Stat::Max => c.max,
                    Stat::P10 => c.p10,
                    Stat::P90 => c.p90,
                })
                .collect();
            if vals.is_empty() {
                return None;
            }
            Some(match stat {
                Stat::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                Stat::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                _ => vals.iter().sum::<f64>() / vals.len() as f64,
            })
        }
        Parameter::Derived(Derived::FrostDays) => Some(summary.months.iter().map(|m| m.frost_days as f64).sum()),
        Parameter::Derived(Derived::FireEvents) => Some(summary.months.iter().map(|m| m.fire_events as f64).sum()),
        Parameter::Derived(Derived::WaterAvailability) => {
            let v: Vec<f64> = summary.months.iter().filter_map(|m| m.water_availability).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rank: usize,
    pub crop: String,
    pub score: f64,
}

/// Score and rank every crop. A parameter missing from the summary
/// contributes zero membership.
pub fn suitability(summary: &SeasonalSummary, table: &RuleTable) -> Result<Vec<Recommendation>, AnalysisError> {
    table.validate()?;
    let mut scored: Vec<(String, f64)> = table
        .crop
        .iter()
        .map(|c| {
            let score = c
                .rules
                .iter()
                .map(|r| {
                    let m = parameter_value(summary, r.parameter, r.stat)
                        .map_or(0.0, |x| band_membership(x, r.ideal, r.limits));
                    r.weight * m
                })
                .sum::<f64>()
                .clamp(0.0, 1.0);
            (c.name.clone(), score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    Ok(scored.into_iter().enumerate().map(|(i, (crop, score))| Recommendation { rank: i + 1, crop, score }).collect())
}

pub fn write_recommendations_csv<W: std::io::Write>(out: W, recs: &[Recommendation]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "crop", "score"])?;
    for r in recs {
        w.write_record([r.rank.to_string(), r.crop.clone(), format!("{:.6}", r.score)])?;
    }
    w.flush()?;
    Ok(())
}
