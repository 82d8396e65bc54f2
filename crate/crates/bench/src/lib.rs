//! Predator-prey benchmark for learned vector fields.
//!
//! Data generation with seeded Gaussian noise ([`data`]), the three
//! evaluation setups ([`eval`]), the four scenario sweeps ([`scenario`]),
//! per-run records and result files ([`record`]), grouping statistics
//! ([`aggregate`]) and plot-ready tables ([`report`]).

pub mod aggregate;
pub mod data;
pub mod error;
pub mod eval;
pub mod lv;
pub mod record;
pub mod report;
pub mod scenario;

pub use error::{BenchError, Result};
pub use eval::{evaluate, EvalSetup, SetupName};
pub use record::{Scenario, ScenarioRecord};
