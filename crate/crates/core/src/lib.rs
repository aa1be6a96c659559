//! Loss-aware two-stage bidirectional inverter (TSBI) model coupled to
//! unbalanced three-phase power flow, with a time-domain reference bench and
//! a battery dispatch layer.

pub mod control;
pub mod dermodels;
pub mod dispatch;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod netmodel;
pub mod phasor;
pub mod report;
pub mod scalar;
pub mod scenario;
pub mod solver;
pub mod tdbench;
pub mod tsbi;

pub use error::{Error, Result};
pub use phasor::Phasor;
