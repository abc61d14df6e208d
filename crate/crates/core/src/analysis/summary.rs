//! Monthly aggregates of exported sensor history.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use super::AnalysisError;
use crate::sensor::SensorKind;

pub const MONTH_DAYS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// One history CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub time: f64,
    pub kind: SensorKind,
    pub value: f64,
    pub flags: u8,
}

#[derive(Deserialize)]
struct RawRow {
    time: f64,
    kind: String,
    value: f64,
    flags: u8,
}

/// Parse a history export. Errors name the 1-based data row.
pub fn read_history<R: Read>(input: R) -> Result<Vec<HistoryRow>, AnalysisError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<RawRow>().enumerate() {
        let row_no = i + 1;
        let raw = rec.map_err(|e| AnalysisError::Row { row: row_no, reason: e.to_string() })?;
        let kind = raw
            .kind
            .parse::<SensorKind>()
            .map_err(|e| AnalysisError::Row { row: row_no, reason: e.to_string() })?;
        if !raw.time.is_finite() || !raw.value.is_finite() {
            return Err(AnalysisError::Row { row: row_no, reason: "non-finite number".into() });
        }
        rows.push(HistoryRow { time: raw.time, kind, value: raw.value, flags: raw.flags });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calendar {
    pub day_length_s: f64,
    pub month_days: [u32; 12],
    /// Expected spacing of samples; inferred per sensor when absent.
    pub sample_period_s: Option<f64>,
    pub frost_c: f64,
    pub fire_threshold: f64,
    /// Tank level counted as "water available".
    pub water_available_m: f64,
}

impl Default for Calendar {
    fn default() -> Self {
        Calendar {
            day_length_s: 86_400.0,
            month_days: MONTH_DAYS,
            sample_period_s: None,
            frost_c: 0.0,
            fire_threshold: 0.5,
            water_available_m: 1.0,
        }
    }
}

impl Calendar {
    pub fn year_length_s(&self) -> f64 {
        self.month_days.iter().sum::<u32>() as f64 * self.day_length_s
    }

    /// 1-based month of year.
    pub fn month_of(&self, t: f64) -> u32 {
        let day = ((t.rem_euclid(self.year_length_s())) / self.day_length_s).floor() as u32;
        let mut acc = 0;
        for (i, d) in self.month_days.iter().enumerate() {
            acc += d;
            if day < acc {
                return i as u32 + 1;
            }
        }
        12
    }

    /// Absolute day number.
    pub fn day_of(&self, t: f64) -> i64 {
        (t / self.day_length_s).floor() as i64
    }

    pub fn month_length_s(&self, month: u32) -> f64 {
        self.month_days[(month - 1) as usize] as f64 * self.day_length_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub kind: SensorKind,
    pub month: u32,
    pub count: usize,
    pub coverage: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthExtras {
    pub month: u32,
    pub frost_days: u32,
    pub fire_events: u32,
    pub water_availability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalSummary {
    pub cells: Vec<SummaryCell>,
    pub months: Vec<MonthExtras>,
    /// Input spans less than one month.
    pub partial: bool,
}

impl SeasonalSummary {
    pub fn cells_for(&self, kind: SensorKind) -> impl Iterator<Item = &SummaryCell> {
        self.cells.iter().filter(move |c| c.kind == kind)
    }
}

/// Lower-quartile gap between samples: the nominal period while up to
/// three quarters of the frames are lost.
fn typical_spacing(times: &mut [f64]) -> Option<f64> {
    times.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 4])
}

pub fn summarize(rows: &[HistoryRow], cal: &Calendar) -> Result<SeasonalSummary, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let t0 = rows.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
    let t1 = rows.iter().map(|r| r.time).fold(f64::NEG_INFINITY, f64::max);
    let shortest_month = *cal.month_days.iter().min().unwrap_or(&28) as f64 * cal.day_length_s;
    let partial = t1 - t0 < shortest_month;

    let mut by_cell: BTreeMap<(SensorKind, u32), Vec<f64>> = BTreeMap::new();
    let mut times_by_kind: BTreeMap<SensorKind, Vec<f64>> = BTreeMap::new();
    let mut span_by_month: BTreeMap<u32, f64> = BTreeMap::new();
    for r in rows {
        by_cell.entry((r.kind, cal.month_of(r.time))).or_default().push(r.value);
        times_by_kind.entry(r.kind).or_default().push(r.time);
    }
    // seconds of each calendar month covered by [t0, t1], per day resolution
    let first_day = cal.day_of(t0);
    let last_day = cal.day_of(t1);
    for day in first_day..=last_day {
        let start = (day as f64 * cal.day_length_s).max(t0);
        let end = ((day + 1) as f64 * cal.day_length_s).min(t1 + 1.0);
        if end > start {
            *span_by_month.entry(cal.month_of(start)).or_default() += end - start;
        }
    }
    let spacing: BTreeMap<SensorKind, f64> = times_by_kind
        .into_iter()
        .filter_map(|(k, mut ts)| cal.sample_period_s.or_else(|| typical_spacing(&mut ts)).map(|p| (k, p)))
        .collect();

    let mut cells = Vec::new();
    for ((kind, month), mut values) in by_cell {
        values.sort_by(f64::total_cmp);
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let (min, max) = (values[0], values[count - 1]);
        let mut data = Data::new(values);
        let p10 = data.percentile(10).clamp(min, max);
        let p90 = data.percentile(90).clamp(min, max);
        let coverage = match (spacing.get(&kind), span_by_month.get(&month)) {
            (Some(p), Some(span)) if *span > 0.0 => (count as f64 * p / span).min(1.0),
            _ => 1.0,
        };
        cells.push(SummaryCell { kind, month, count, coverage, min, max, mean, p10, p90 });
    }

    let mut months: BTreeMap<u32, MonthExtras> = BTreeMap::new();
    let mut temp_min_by_day: BTreeMap<i64, f64> = BTreeMap::new();
    let mut fire: Vec<(f64, f64)> = Vec::new();
    let mut water: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in rows {
        match r.kind {
            SensorKind::Temperature => {
                let e = temp_min_by_day.entry(cal.day_of(r.time)).or_insert(f64::INFINITY);
                *e = e.min(r.value);
            }
            SensorKind::FireSmoke => fire.push((r.time, r.value)),
            SensorKind::TankLevel => {
                let e = water.entry(cal.month_of(r.time)).or_default();
                e.1 += 1;
                if r.value >= cal.water_available_m {
                    e.0 += 1;
                }
            }
            _ => {}
        }
    }
    for month in cells.iter().map(|c| c.month) {
        months.entry(month).or_insert(MonthExtras { month, frost_days: 0, fire_events: 0, water_availability: None });
    }
    for (day, tmin) in temp_min_by_day {
        if tmin < cal.frost_c {
            let month = cal.month_of(day as f64 * cal.day_length_s);
            months.entry(month).and_modify(|m| m.frost_days += 1);
        }
    }
    fire.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut above = false;
    for (t, v) in fire {
        let now_above = v >= cal.fire_threshold;
        if now_above && !above {
            months.entry(cal.month_of(t)).and_modify(|m| m.fire_events += 1);
        }
        above = now_above;
    }
    for (month, (ok, n)) in water {
        months.entry(month).and_modify(|m| m.water_availability = Some(ok as f64 / n as f64));
    }
    Ok(SeasonalSummary { cells, months: months.into_values().collect(), partial })
}

pub fn write_summary_csv<W: std::io::Write>(out: W, s: &SeasonalSummary) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "month", "count", "coverage", "min", "max", "mean", "p10", "p90"])?;
    for c in &s.cells {
        w.write_record([
            c.kind.as_str().to_string(),
            c.month.to_string(),
            c.count.to_string(),
            format!("{:.4}", c.coverage),
            c.min.to_string(),
            c.max.to_string(),
            c.mean.to_string(),
            c.p10.to_string(),
            c.p90.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_months_csv<W: std::io::Write>(out: W, s: &SeasonalSummary) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["month", "frost_days", "fire_events", "water_availability"])?;
    for m in &s.months {
        w.write_record([
            m.month.to_string(),
            m.frost_days.to_string(),
            m.fire_events.to_string(),
            m.water_availability.map(|v| format!("{v:.4}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(time: f64, kind: SensorKind, value: f64) -> HistoryRow {
        HistoryRow { time, kind, value, flags: 0 }
    }

    #[test]
    fn month_boundaries() {
        let c = Calendar::default();
        assert_eq!(c.month_of(0.0), 1);
        assert_eq!(c.month_of(30.99 * 86400.0), 1);
        assert_eq!(c.month_of(31.0 * 86400.0), 2);
        assert_eq!(c.month_of(364.5 * 86400.0), 12);
        assert_eq!(c.month_of(365.0 * 86400.0), 1);
    }

    #[test]
    fn constant_series() {
        let c = Calendar::default();
        let rows: Vec<_> = (0..365 * 24).map(|h| row(h as f64 * 3600.0, SensorKind::Temperature, 25.5)).collect();
        let s = summarize(&rows, &c).unwrap();
        assert_eq!(s.cells.len(), 12);
        assert!(!s.partial);
        for cell in &s.cells {
            assert_eq!(cell.mean, 25.5);
            assert_eq!(cell.p10, 25.5);
            assert!((cell.coverage - 1.0).abs() < 1e-9, "{}", cell.coverage);
        }
    }

    #[test]
    fn short_input_is_partial() {
        let rows = vec![row(0.0, SensorKind::Ph, 5.0), row(60.0, SensorKind::Ph, 5.0)];
        assert!(summarize(&rows, &Calendar::default()).unwrap().partial);
        assert!(matches!(summarize(&[], &Calendar::default()), Err(AnalysisError::Empty)));
    }

    #[test]
    fn frost_and_fire_counts() {
        let c = Calendar::default();
        let rows = vec![
            row(0.0, SensorKind::Temperature, -1.0),
            row(43200.0, SensorKind::Temperature, 5.0),
            row(86400.0, SensorKind::Temperature, 3.0),
            row(10.0, SensorKind::FireSmoke, 0.1),
            row(20.0, SensorKind::FireSmoke, 0.9),
            row(30.0, SensorKind::FireSmoke, 0.8),
            row(40.0, SensorKind::FireSmoke, 0.1),
            row(50.0, SensorKind::FireSmoke, 0.7),
        ];
        let s = summarize(&rows, &c).unwrap();
        assert_eq!(s.months[0].frost_days, 1);
        assert_eq!(s.months[0].fire_events, 2);
    }

    #[test]
    fn malformed_row_is_named() {
        let text = "time,kind,value,flags\n0,temperature,20,0\n60,temperature,abc,0\n";
        match read_history(text.as_bytes()) {
            Err(AnalysisError::Row { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }
}
