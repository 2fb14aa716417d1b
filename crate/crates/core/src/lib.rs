//! Text-channel active-monitoring engine: scripted symptom-check dialogs,
//! confidence-scored intent classification, uncertainty-driven escalation,
//! a simulated call campaign with ground truth, and a Bayesian estimate of
//! the community infection rate.

pub mod campaign;
pub mod config;
pub mod dialog;
pub mod error;
pub mod nlu;
pub mod popsim;
pub mod spread;
pub mod store;
pub mod triage;

pub use error::{Error, Result};

/// Wall-clock instants are naive local times; the campaign runs on a single
/// site clock.
pub type Timestamp = chrono::NaiveDateTime;
