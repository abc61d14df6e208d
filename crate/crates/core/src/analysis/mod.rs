//! Offline analytics over exported history. Each mode sits behind
//! [`AnalysisMode`] and is looked up by name in a [`ModeRegistry`].

pub mod finance;
pub mod suitability;
pub mod summary;

use std::collections::BTreeMap;
use std::path::PathBuf;

pub use finance::{cumulative_cash_flow, expenditure_comparison, CashFlowSeries, ExpenditureRow, FinanceParams};
pub use suitability::{band_membership, suitability, Recommendation, RuleTable};
pub use summary::{read_history, summarize, Calendar, HistoryRow, SeasonalSummary, SummaryCell};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("history is empty")]
    Empty,
    #[error("history row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown analysis mode `{0}`")]
    UnknownMode(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const DEMO_CROPS: &str = include_str!("../../scenarios/crops_demo.toml");

/// What a mode may read.
#[derive(Debug, Clone, Default)]
pub struct AnalysisInput {
    pub history: Option<Vec<HistoryRow>>,
    /// Parameter file; modes read their own section (`calendar`, `finance`).
    pub params: toml::Table,
    /// Crop rule table text.
    pub rules: Option<String>,
}

impl AnalysisInput {
    fn section<T: serde::de::DeserializeOwned + Default>(&self, key: &str) -> Result<T, AnalysisError> {
        match self.params.get(key) {
            None => Ok(T::default()),
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| AnalysisError::Config(format!("[{key}]: {e}"))),
        }
    }

    fn history(&self) -> Result<&[HistoryRow], AnalysisError> {
        self.history.as_deref().ok_or_else(|| AnalysisError::Config("this mode needs a history CSV".into()))
    }
}

/// Named output; the caller prefixes it with the input stem.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub suffix: String,
    pub contents: Vec<u8>,
}

pub trait AnalysisMode: Send + Sync {
    fn name(&self) -> &'static str;
    fn needs_history(&self) -> bool;
    fn run(&self, input: &AnalysisInput) -> Result<Vec<OutputFile>, AnalysisError>;
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, AnalysisError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub struct SummaryMode;

impl AnalysisMode for SummaryMode {
    fn name(&self) -> &'static str {
        "summary"
    }

    fn needs_history(&self) -> bool {
        true
    }

    fn run(&self, input: &AnalysisInput) -> Result<Vec<OutputFile>, AnalysisError> {
        let cal: Calendar = input.section("calendar")?;
        let s = summarize(input.history()?, &cal)?;
        if s.partial {
            log::warn!("history spans less than one month; summary is partial");
        }
        Ok(vec![
            OutputFile { suffix: "summary.csv".into(), contents: csv_bytes(|b| summary::write_summary_csv(b, &s))? },
            OutputFile {
                suffix: "summary_months.csv".into(),
                contents: csv_bytes(|b| summary::write_months_csv(b, &s))?,
            },
        ])
    }
}

pub struct SuitabilityMode;

impl AnalysisMode for SuitabilityMode {
    fn name(&self) -> &'static str {
        "suitability"
    }

    fn needs_history(&self) -> bool {
        true
    }

    fn run(&self, input: &AnalysisInput) -> Result<Vec<OutputFile>, AnalysisError> {
        let text = input.rules.as_deref().ok_or_else(|| AnalysisError::Config("suitability needs a crop rule table".into()))?;
        let table = RuleTable::from_toml(text)?;
        let cal: Calendar = input.section("calendar")?;
        let s = summarize(input.history()?, &cal)?;
        let recs = suitability(&s, &table)?;
        Ok(vec![OutputFile {
            suffix: "suitability.csv".into(),
            contents: csv_bytes(|b| suitability::write_recommendations_csv(b, &recs))?,
        }])
    }
}

pub struct FinanceMode;

impl AnalysisMode for FinanceMode {
    fn name(&self) -> &'static str {
        "finance"
    }

    fn needs_history(&self) -> bool {
        false
    }

    fn run(&self, input: &AnalysisInput) -> Result<Vec<OutputFile>, AnalysisError> {
        let p: FinanceParams = input.section("finance")?;
        p.validate()?;
        let series = cumulative_cash_flow(p.i0, p.s1, p.growth, p.years)?;
        let spend = expenditure_comparison(&p);
        Ok(vec![
            OutputFile {
                suffix: "finance.csv".into(),
                contents: csv_bytes(|b| finance::write_cash_flow_csv(b, &series))?,
            },
            OutputFile {
                suffix: "finance_expenditure.csv".into(),
                contents: csv_bytes(|b| finance::write_expenditure_csv(b, &spend))?,
            },
            OutputFile { suffix: "finance_plot.dat".into(), contents: finance::plot_data(&series).into_bytes() },
        ])
    }
}

pub struct ModeRegistry {
    modes: BTreeMap<&'static str, Box<dyn AnalysisMode>>,
}

impl Default for ModeRegistry {
    fn default() -> Self {
        let mut r = ModeRegistry { modes: BTreeMap::new() };
        r.register(Box::new(SummaryMode));
        r.register(Box::new(SuitabilityMode));
        r.register(Box::new(FinanceMode));
        r
    }
}

impl ModeRegistry {
    pub fn register(&mut self, mode: Box<dyn AnalysisMode>) {
        self.modes.insert(mode.name(), mode);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.modes.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn AnalysisMode, AnalysisError> {
        self.modes.get(name).map(|m| m.as_ref()).ok_or_else(|| AnalysisError::UnknownMode(name.to_string()))
    }
}
