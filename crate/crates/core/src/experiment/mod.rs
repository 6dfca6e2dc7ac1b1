//! Scenario handling and experiment drivers.

pub mod campaign;
pub mod figures;
pub mod output;
pub mod scenario;
pub mod validate;

pub use campaign::{drop_inputs, run_campaign, CampaignResult, DropResult};
pub use figures::{experiment_convergence, experiment_outage, experiment_rsi_sweep};
pub use scenario::Scenario;
pub use validate::{validate_closed_forms, OracleReport};
