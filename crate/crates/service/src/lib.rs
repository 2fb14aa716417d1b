//! Runnable system around `carecall-core`: the [`service::Service`]
//! operations, their HTTP binding in [`api`], and the simulation driver
//! used by the `carecall simulate` command.

pub mod api;
pub mod service;
pub mod simulate;

pub use api::{router, AppState};
pub use service::{Service, ServiceError, ServiceResult};
pub use simulate::{SimulationPlan, SimulationReport};
