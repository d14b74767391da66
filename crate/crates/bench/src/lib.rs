//! Shared fixtures for the criterion targets.

use laagrid_core::{AttackSpec, Network, Scenario};
use nalgebra::DMatrix;

/// Alternating surge/shed pattern over the whole attack surface. Strong
/// enough to move the frequency and keep the event machinery busy without
/// collapsing the integration.
pub fn pump_spec(network: &Network, tau: Scenario, interval_i: f64) -> AttackSpec {
    let rows = network.attack_surface().len();
    let cols = (60.0 / interval_i).floor() as usize;
    let eta = DMatrix::from_fn(rows, cols, |_, j| if j % 2 == 0 { 2.0 } else { -0.5 });
    AttackSpec::new(eta, 0.8, tau, interval_i, 60.0).expect("pump spec is valid")
}
