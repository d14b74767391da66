//! Load-altering attack studies on frequency-coupled grid models.
//!
//! The crate builds reduced network models, finds their equilibria, runs the
//! hybrid third-order dynamics with emergency-response relays, calibrates
//! those relays to ride through any single-component outage, and samples the
//! rare attack vectors that still break through, using a skipping sampler
//! alongside Monte Carlo and random-walk baselines.

pub mod analysis;
pub mod attack;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod protection;
pub mod sampler;
pub mod store;

pub use analysis::{
    ks_statistic, reverse_governor_fit, welch_t_test, GovernorClass, RegressionResult,
};
pub use attack::{AttackSpec, RealizedAttack};
pub use dynamics::{
    derivatives, integrate_with_events, Contingency, IntegratorConfig, Method, SimOutcome,
    SystemState,
};
pub use error::{CoreError, Result};
pub use grid::{apply_scenario, find_equilibrium, ieee39, kron_reduce, ktas, Network, Scenario};
pub use protection::{calibrate_n1, effective_load_factor, ERConfig, EREvent, EventKind};
