//! Continuous distributed tracking of heavy hitters and quantiles.
//!
//! `k` sites each observe part of a stream; a coordinator maintains answers
//! about the union while the library counts every word exchanged. Trackers
//! run inside a deterministic simulator next to an exact oracle.

pub mod adversary;
pub mod allq;
pub mod config;
pub mod error;
pub mod experiment;
pub mod hh;
pub mod ledger;
pub mod oracle;
pub mod quantile;
pub mod simulator;
pub mod site;
pub mod sketches;
pub mod stream;

pub use config::{Frac, Mode, TrackerConfig, TrackerKind};
pub use error::{Error, Result};
pub use ledger::{ArrivalEvent, CostLedger, Key, Message, MessageKind};
pub use oracle::ExactOracle;
pub use simulator::{CheckpointPolicy, SimulationRun, Tracker, Violation, ViolationKind, ViolationReport};
