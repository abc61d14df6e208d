//! Expenditure comparison and cumulative cash flow.

use serde::{Deserialize, Serialize};

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinanceParams {
    /// Initial investment, shared by both schemes.
    pub i0: f64,
    /// First-year savings of digital over manual operation.
    pub s1: f64,
    /// Yearly growth factor of the savings.
    pub growth: f64,
    pub years: u32,
    pub period_months: u32,
    pub manual_running_per_month: f64,
    pub digital_running_per_month: f64,
    /// Area the cost figures refer to; outputs are scaled to 10 ha.
    pub area_ha: f64,
}

impl Default for FinanceParams {
    fn default() -> Self {
        FinanceParams {
            i0: 10_000.0,
            s1: 5_000.0,
            growth: 1.105,
            years: 10,
            period_months: 6,
            manual_running_per_month: 400.0,
            digital_running_per_month: 150.0,
            area_ha: 10.0,
        }
    }
}

impl FinanceParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::Config(m.to_string()));
        if !(self.i0 > 0.0 && self.s1 > 0.0 && self.growth > 0.0) {
            return bad("i0, s1 and growth must be positive");
        }
        if !(self.area_ha > 0.0) {
            return bad("area_ha must be positive");
        }
        if self.manual_running_per_month < 0.0 || self.digital_running_per_month < 0.0 {
            return bad("running costs must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpenditureRow {
    pub month: u32,
    pub manual: f64,
    pub digital: f64,
}

/// Cumulative spend per month, month 0 being the shared investment.
pub fn expenditure_comparison(p: &FinanceParams) -> Vec<ExpenditureRow> {
    let scale = 10.0 / p.area_ha;
    (0..=p.period_months)
        .map(|m| ExpenditureRow {
            month: m,
            manual: (p.i0 + m as f64 * p.manual_running_per_month) * scale,
            digital: (p.i0 + m as f64 * p.digital_running_per_month) * scale,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashFlowSeries {
    pub initial_investment: f64,
    /// `savings[k - 1]` is S_k.
    pub savings: Vec<f64>,
    /// `ccf[y]` for y = 0..=years.
    pub ccf: Vec<f64>,
    pub break_even_year: Option<u32>,
}

pub fn cumulative_cash_flow(i0: f64, s1: f64, growth: f64, years: u32) -> Result<CashFlowSeries, AnalysisError> {
    if !(i0 > 0.0 && s1 > 0.0 && growth > 0.0) {
        return Err(AnalysisError::Config("i0, s1 and growth must be positive".into()));
    }
    let savings: Vec<f64> = (1..=years).map(|k| s1 * growth.powi(k as i32 - 1)).collect();
    let mut ccf = Vec::with_capacity(years as usize + 1);
    ccf.push(-i0);
    for s in &savings {
        ccf.push(ccf[ccf.len() - 1] + s);
    }
    let break_even_year = ccf.iter().position(|&v| v >= 0.0).map(|y| y as u32);
    Ok(CashFlowSeries { initial_investment: i0, savings, ccf, break_even_year })
}

pub fn write_cash_flow_csv<W: std::io::Write>(out: W, s: &CashFlowSeries) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "saving", "ccf"])?;
    for (y, v) in s.ccf.iter().enumerate() {
        let saving = if y == 0 { -s.initial_investment } else { s.savings[y - 1] };
        w.write_record([y.to_string(), format!("{saving:.2}"), format!("{v:.2}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_expenditure_csv<W: std::io::Write>(out: W, rows: &[ExpenditureRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["month", "manual", "digital"])?;
    for r in rows {
        w.write_record([r.month.to_string(), format!("{:.2}", r.manual), format!("{:.2}", r.digital)])?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated `year ccf` lines for plotting tools.
pub fn plot_data(s: &CashFlowSeries) -> String {
    let mut out = String::from("# year ccf\n");
    for (y, v) in s.ccf.iter().enumerate() {
        out.push_str(&format!("{y} {v:.2}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_accumulation() {
        let rows = expenditure_comparison(&FinanceParams::default());
        assert_eq!(rows.len(), 7);
        assert_eq!((rows[0].manual, rows[0].digital), (10_000.0, 10_000.0));
        assert_eq!((rows[6].manual, rows[6].digital), (12_400.0, 10_900.0));
    }

    #[test]
    fn area_normalisation() {
        let p = FinanceParams { area_ha: 20.0, ..FinanceParams::default() };
        assert_eq!(expenditure_comparison(&p)[0].manual, 5_000.0);
    }

    #[test]
    fn one_year_payback() {
        let s = cumulative_cash_flow(1000.0, 1000.0, 1.0, 5).unwrap();
        assert_eq!(s.ccf[0], -1000.0);
        assert_eq!(s.break_even_year, Some(1));
    }

    #[test]
    fn rejects_non_positive_inputs() {
        assert!(cumulative_cash_flow(0.0, 1.0, 1.0, 3).is_err());
        assert!(cumulative_cash_flow(1.0, 1.0, 0.0, 3).is_err());
    }
}
