//! Fisher-information analysis of a lossy fibered two-photon
//! interferometer.
//!
//! The library models an energy-time-entangled N00N-state probe read out
//! through four lossy detection lines, and answers one question end to end:
//! does the entangled probe still beat the best single-photon strategy at
//! equal photon budget once every loss is accounted for?
//!
//! The pieces compose in pipeline order:
//!
//! - [`calibration`]: per-line transmissions from power-meter records, with
//!   a dB consistency audit.
//! - [`model`]: detection-probability laws for the N00N, coincidence,
//!   single-photon, and distinguishable-pair configurations.
//! - [`fisher`]: pointwise Fisher information, global maxima, closed-form
//!   approximations, and the quantum-advantage ratio `R`.
//! - [`simulator`]: seeded Poisson fringe scans with WDM routing and
//!   multi-pair diagnostics.
//! - [`fitting`]: fringe fits with pooled visibility and propagation of fit
//!   uncertainty into Fisher-information bands.

pub mod calibration;
pub mod error;
pub mod fisher;
pub mod fitting;
pub mod model;
pub mod simulator;
pub mod util;

pub use calibration::{
    build_loss_budget, consistency_audit, AuditReport, BudgetSource, CalibrationRecord, LossBudget,
};
pub use error::{Error, Result};
pub use fisher::{
    advantage_closed_form, advantage_numeric, max_fisher, scenario_report, AdvantageReport,
    Pairing, Scenario,
};
pub use fitting::{fit_fringes, fit_fringes_with, FitConfig, FitMode, FitResult};
pub use model::{
    coincidence_distribution, noon_output_distribution, single_photon_distribution,
    visibility_from_relative_loss, NoonProbe, OutcomeDistribution, Visibility,
};
pub use simulator::{simulate_fringe_scan, FringeScan, ScanConfig};
