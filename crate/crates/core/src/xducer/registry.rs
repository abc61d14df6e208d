use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;

use super::chains::{
    AffineChain, AffineParams, CapacitiveChain, CapacitiveParams, ThermistorChain, ThermistorChainParams,
    WindmillChain,
};
use super::{SignalChain, XducerError};
use crate::sensor::SensorKind;

/// Builds a chain for a sensor kind from its scenario-file parameter table.
pub type ChainFactory = fn(SensorKind, &toml::Table) -> Result<Arc<dyn SignalChain>, XducerError>;

/// Signal chains by name.
#[derive(Clone)]
pub struct ChainRegistry {
    factories: BTreeMap<&'static str, ChainFactory>,
}

impl std::fmt::Debug for ChainRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.factories.keys()).finish()
    }
}

fn params<P: DeserializeOwned>(kind: SensorKind, table: &toml::Table) -> Result<P, XducerError> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e| XducerError::Config(format!("{kind}: {e}")))
}

fn thermistor(kind: SensorKind, table: &toml::Table) -> Result<Arc<dyn SignalChain>, XducerError> {
    if kind != SensorKind::Temperature {
        return Err(XducerError::Config(format!("thermistor_bridge cannot measure {kind}")));
    }
    let p: ThermistorChainParams = params(kind, table)?;
    Ok(Arc::new(ThermistorChain::new(&p)?))
}

fn capacitive(kind: SensorKind, table: &toml::Table) -> Result<Arc<dyn SignalChain>, XducerError> {
    let mut p: CapacitiveParams = params(kind, table)?;
    if !table.contains_key("height") && kind == SensorKind::LakeLevel {
        p.height = 50.0;
    }
    Ok(Arc::new(CapacitiveChain::new(kind, &p)?))
}

fn windmill(kind: SensorKind, table: &toml::Table) -> Result<Arc<dyn SignalChain>, XducerError> {
    if kind != SensorKind::Wind {
        return Err(XducerError::Config(format!("windmill cannot measure {kind}")));
    }
    let chain: WindmillChain = params(kind, table)?;
    chain.validate()?;
    Ok(Arc::new(chain))
}

fn affine(kind: SensorKind, table: &toml::Table) -> Result<Arc<dyn SignalChain>, XducerError> {
    let p: AffineParams = params(kind, table)?;
    Ok(Arc::new(AffineChain::new(kind, &p)?))
}

impl ChainRegistry {
    pub fn empty() -> Self {
        ChainRegistry { factories: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register("thermistor_bridge", thermistor);
        registry.register("capacitive_level", capacitive);
        registry.register("windmill", windmill);
        registry.register("affine", affine);
        registry
    }

    pub fn register(&mut self, name: &'static str, factory: ChainFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn default_chain_name(kind: SensorKind) -> &'static str {
        match kind {
            SensorKind::Temperature => "thermistor_bridge",
            SensorKind::LakeLevel | SensorKind::TankLevel => "capacitive_level",
            SensorKind::Wind => "windmill",
            _ => "affine",
        }
    }

    pub fn build(&self, name: &str, kind: SensorKind, table: &toml::Table) -> Result<Arc<dyn SignalChain>, XducerError> {
        let factory = self.factories.get(name).ok_or_else(|| XducerError::UnknownChain(name.to_string()))?;
        factory(kind, table)
    }

    pub fn default_for(&self, kind: SensorKind) -> Result<Arc<dyn SignalChain>, XducerError> {
        self.build(Self::default_chain_name(kind), kind, &toml::Table::new())
    }
}
