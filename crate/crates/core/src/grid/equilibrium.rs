//! Equilibrium initialization: damped Newton on the steady-state residual of
//! the full node dynamics, flat start (delta = 0, E = E_f).

use nalgebra::{DMatrix, DVector};

use super::{apply_scenario, coupling, dispatch, Network, Scenario};
use crate::dynamics::SystemState;
use crate::error::{CoreError, Result};

const NEWTON_TOL: f64 = 1e-10;
const EPSILON_EQ: f64 = 1e-8;
const MAX_ITERS: usize = 60;
const FD_STEP: f64 = 1e-7;

struct EqProblem<'a> {
    network: &'a Network,
    pe: DVector<f64>,
    p_eq: DVector<f64>,
    x_r: DVector<f64>,
    ef: DVector<f64>,
    /// Node indices excluding the angle reference, in ascending order.
    free: Vec<usize>,
}

impl EqProblem<'_> {
    fn unpack(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.network.n_total();
        let mut delta = DVector::zeros(n);
        for (k, &i) in self.free.iter().enumerate() {
            delta[i] = x[k];
        }
        let e = x.rows(n - 1, n).into_owned();
        (delta, e)
    }

    /// Residual layout: active-power mismatch at free nodes, then the voltage
    /// equation at every node.
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.network.n_total();
        let (delta, e) = self.unpack(x);
        let (sin_c, cos_c) = coupling(&self.network.susceptance_b, &delta, &e);
        let mut res = DVector::zeros(2 * n - 1);
        for (k, &i) in self.free.iter().enumerate() {
            let injection = if i < self.network.n_gen { self.pe[i] } else { 0.0 };
            res[k] = injection - self.p_eq[i] - e[i] * sin_c[i];
        }
        for i in 0..n {
            res[n - 1 + i] = self.ef[i] - e[i] + self.x_r[i] * cos_c[i];
        }
        res
    }
}

/// Solves for the rest state of a network under a scenario: zero frequency
/// deviation, proportional dispatch, angles/voltages from the power-flow and
/// voltage equations. Errors if the scenario load exceeds capacity or the
/// Newton iteration cannot reach the residual tolerance.
pub fn find_equilibrium(network: &Network, tau: Scenario) -> Result<SystemState> {
    let n = network.n_total();
    let arrays = network.node_arrays();
    let p_eq = apply_scenario(network, tau);
    let pe_gen = dispatch(network, &p_eq)?;
    let mut pe = DVector::zeros(n);
    pe.rows_mut(0, network.n_gen).copy_from(&pe_gen);

    let problem = EqProblem {
        network,
        pe,
        p_eq,
        x_r: DVector::from_vec(arrays.reactance_x.clone()),
        ef: DVector::from_vec(arrays.field_voltage_ef.clone()),
        free: (0..n).filter(|&i| i != network.reference_node).collect(),
    };

    // Flat start: all angles zero, voltages at field voltage.
    let mut x = DVector::zeros(2 * n - 1);
    for i in 0..n {
        x[n - 1 + i] = problem.ef[i];
    }

    let dim = 2 * n - 1;
    let mut res = problem.residual(&x);
    let mut iterations = 0;
    for iter in 0..MAX_ITERS {
        iterations = iter;
        let worst = res.amax();
        if worst < NEWTON_TOL {
            break;
        }
        let mut jac = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let mut xp = x.clone();
            xp[k] += FD_STEP;
            let rp = problem.residual(&xp);
            for r in 0..dim {
                jac[(r, k)] = (rp[r] - res[r]) / FD_STEP;
            }
        }
        let step = jac.lu().solve(&(-&res)).ok_or(CoreError::EquilibriumNotConverged {
            residual: worst,
            iterations: iter,
        })?;
        // Backtracking: halve until the residual shrinks, else take the full step.
        let mut lambda = 1.0;
        let mut advanced = false;
        while lambda > 1e-4 {
            let candidate = &x + lambda * &step;
            let cres = problem.residual(&candidate);
            if cres.amax() < worst {
                x = candidate;
                res = cres;
                advanced = true;
                break;
            }
            lambda *= 0.5;
        }
        if !advanced {
            x += &step;
            res = problem.residual(&x);
        }
    }
    let worst = res.amax();
    if worst > EPSILON_EQ {
        return Err(CoreError::EquilibriumNotConverged { residual: worst, iterations });
    }

    let (delta, e) = problem.unpack(&x);
    Ok(SystemState::at_rest(network, delta, e))
}
