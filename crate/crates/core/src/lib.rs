//! Simulation and control plane for a remote digital-irrigation site.

pub mod analysis;
pub mod config;
pub mod ctrlserver;
pub mod envsim;
pub mod fieldctl;
pub mod fieldnet;
pub mod gateway;
pub mod plant;
pub mod sensor;
pub mod xducer;

pub use sensor::SensorKind;
