//! Load-altering attack model. A single quadruple (eta, nu, tau, I) covers
//! both static attacks (one change, I = 60 s) and dynamic attacks (a change
//! every I seconds); the static case is the n = 1 limit of the dynamic one.
//!
//! Realized loads follow a clamp law: the attacker owns the fraction nu of a
//! node's demand and can move it anywhere in [0, nu * P^TL], while the
//! remaining (1 - nu) share stays at its equilibrium value. Realized change
//! bookkeeping (lambda, Sigma) is computed from the clamp function directly,
//! so it is independent of the integrator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{Network, Scenario};

/// Simulation horizon (s); also the interval of a static attack.
pub const T_MAX: f64 = 60.0;
/// Smallest allowed change interval (s).
pub const INTERVAL_MIN: f64 = 1.0;
/// Initial-draw bounds for eta entries. Skipping updates may leave this box;
/// the clamp law bounds the physical effect regardless.
pub const ETA_MIN: f64 = -1.0;
pub const ETA_MAX: f64 = 5.0;

/// Number of changes and their times for an attack with the given interval:
/// n = floor(t_max / I), t_j = (j - 1) * I.
pub fn build_schedule(interval_i: f64, t_max: f64) -> Result<(usize, Vec<f64>)> {
    if !(INTERVAL_MIN..=t_max).contains(&interval_i) {
        return Err(CoreError::InvalidInput(format!(
            "change interval {interval_i} s outside [{INTERVAL_MIN}, {t_max}] s"
        )));
    }
    let n = (t_max / interval_i).floor() as usize;
    let times = (0..n).map(|j| j as f64 * interval_i).collect();
    Ok((n, times))
}

/// Full attack description. Row k of `eta` addresses the k-th node of the
/// network's attack surface (ascending node index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AttackSpecFile", into = "AttackSpecFile")]
pub struct AttackSpec {
    pub eta: DMatrix<f64>,
    pub nu: f64,
    pub tau: Scenario,
    pub interval_i: f64,
    pub n_changes: usize,
    pub attack_times: Vec<f64>,
}

/// Serialized form: eta as explicit rows, schedule derived on load.
#[derive(Serialize, Deserialize)]
struct AttackSpecFile {
    eta: Vec<Vec<f64>>,
    nu: f64,
    tau: Scenario,
    interval_i: f64,
}

impl TryFrom<AttackSpecFile> for AttackSpec {
    type Error = CoreError;
    fn try_from(f: AttackSpecFile) -> Result<AttackSpec> {
        let rows = f.eta.len();
        let cols = f.eta.first().map_or(0, Vec::len);
        if f.eta.iter().any(|r| r.len() != cols) {
            return Err(CoreError::InvalidInput("ragged eta rows".into()));
        }
        let eta = DMatrix::from_fn(rows, cols, |i, j| f.eta[i][j]);
        AttackSpec::new(eta, f.nu, f.tau, f.interval_i, T_MAX)
    }
}

impl From<AttackSpec> for AttackSpecFile {
    fn from(spec: AttackSpec) -> AttackSpecFile {
        AttackSpecFile {
            eta: (0..spec.eta.nrows())
                .map(|i| spec.eta.row(i).iter().copied().collect())
                .collect(),
            nu: spec.nu,
            tau: spec.tau,
            interval_i: spec.interval_i,
        }
    }
}

impl AttackSpec {
    pub fn new(
        eta: DMatrix<f64>,
        nu: f64,
        tau: Scenario,
        interval_i: f64,
        t_max: f64,
    ) -> Result<AttackSpec> {
        if !(0.0..=1.0).contains(&nu) {
            return Err(CoreError::InvalidInput(format!("nu = {nu} outside [0, 1]")));
        }
        let (n_changes, attack_times) = build_schedule(interval_i, t_max)?;
        if eta.ncols() != n_changes {
            return Err(CoreError::InvalidInput(format!(
                "eta has {} columns, schedule for I = {interval_i} s needs {n_changes}",
                eta.ncols()
            )));
        }
        Ok(AttackSpec { eta, nu, tau, interval_i, n_changes, attack_times })
    }

    /// No-op attack used for equilibrium and contingency runs.
    pub fn zero(network: &Network, tau: Scenario) -> AttackSpec {
        let l = network.attack_surface().len();
        AttackSpec::new(DMatrix::zeros(l, 1), 0.0, tau, T_MAX, T_MAX)
            .expect("zero spec is always valid")
    }

    /// Index of the eta column active at time t (step function, last change
    /// holds to the horizon).
    pub fn column_at(&self, t: f64) -> usize {
        let j = (t / self.interval_i).floor() as usize;
        j.min(self.n_changes - 1)
    }

    /// Checks the eta row count against a network's attack surface.
    pub fn validate_for(&self, network: &Network) -> Result<()> {
        let l = network.attack_surface().len();
        if self.eta.nrows() != l {
            return Err(CoreError::InvalidInput(format!(
                "eta has {} rows, network {} has {l} attackable nodes",
                self.eta.nrows(),
                network.name
            )));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<AttackSpec> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Commanded load offset u_hat_i(t) = P_i^eq * eta_{i, j(t)} for the attack
/// surface (p_eq indexed like eta rows).
pub fn commanded_load(spec: &AttackSpec, p_eq: &DVector<f64>, t: f64) -> DVector<f64> {
    let j = spec.column_at(t);
    DVector::from_fn(p_eq.len(), |i, _| p_eq[i] * spec.eta[(i, j)])
}

/// Realized (pre-shedding) load under attacker authority nu:
/// (1 - nu) * P^eq + nu * clamp(P^eq + u_hat, 0, P^TL).
///
/// The clamp to [0, P^TL] follows the stated authority limits ("between 0 and
/// nu * P^TL"); the vulnerable share can be driven anywhere in that band and
/// no further.
pub fn realized_net_load(
    nu: f64,
    p_eq: &DVector<f64>,
    p_tl: &DVector<f64>,
    u_hat: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(p_eq.len(), |i, _| {
        (1.0 - nu) * p_eq[i] + nu * (p_eq[i] + u_hat[i]).clamp(0.0, p_tl[i])
    })
}

/// Realized changes lambda_{i,j} and their cumulative magnitudes Sigma_i.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RealizedAttack {
    /// lambda_{i,j}: jump of the realized load of surface node i at time t_j.
    pub lambda: DMatrix<f64>,
    /// Sigma_i = sum_j |lambda_{i,j}|.
    pub sigma: DVector<f64>,
}

impl RealizedAttack {
    /// Net (signed) system-wide load change at each attack time; the
    /// regressor in the reverse-governor analysis.
    pub fn net_changes(&self) -> Vec<f64> {
        (0..self.lambda.ncols()).map(|j| self.lambda.column(j).sum()).collect()
    }

    /// Mean |lambda| over every node and change.
    pub fn mean_abs_change(&self) -> f64 {
        let count = self.lambda.len();
        if count == 0 {
            return 0.0;
        }
        self.lambda.iter().map(|v| v.abs()).sum::<f64>() / count as f64
    }
}

/// Evaluates the clamp law at each change time; column 0 jumps from the
/// unattacked equilibrium load. Integrator-independent by construction.
pub fn realized_changes(
    spec: &AttackSpec,
    p_eq: &DVector<f64>,
    p_tl: &DVector<f64>,
) -> RealizedAttack {
    let l = spec.eta.nrows();
    let n = spec.n_changes;
    let mut lambda = DMatrix::zeros(l, n);
    let mut previous = p_eq.clone();
    for j in 0..n {
        let u_hat = DVector::from_fn(l, |i, _| p_eq[i] * spec.eta[(i, j)]);
        let realized = realized_net_load(spec.nu, p_eq, p_tl, &u_hat);
        lambda.set_column(j, &(&realized - &previous));
        previous = realized;
    }
    let sigma = DVector::from_fn(l, |i, _| lambda.row(i).iter().map(|v| v.abs()).sum());
    RealizedAttack { lambda, sigma }
}
