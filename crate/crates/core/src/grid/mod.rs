//! Network data model: machine/load parameters, reduced susceptance matrix,
//! diurnal load scenarios, proportional dispatch, and equilibrium solving.
//!
//! Node indexing convention used everywhere in this crate: generator nodes
//! come first (`0..n_gen`), pure load nodes follow (`n_gen..n_gen+n_load`).
//! A generator node may additionally carry a co-located load; such nodes are
//! part of the attack surface but host no load-shedding relays (the machine,
//! not a distribution feeder, dominates the bus).

mod equilibrium;
mod kron;
mod presets;

pub use equilibrium::find_equilibrium;
pub use kron::kron_reduce;
pub use presets::{ieee39, ktas};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Diurnal load-balance scenario. The factor scales every base load.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Night = 1,
    Morning = 2,
    Afternoon = 3,
    Evening = 4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Night,
        Scenario::Morning,
        Scenario::Afternoon,
        Scenario::Evening,
    ];

    pub fn factor(self) -> f64 {
        match self {
            Scenario::Night => 0.4,
            Scenario::Morning => 1.0,
            Scenario::Afternoon => 0.85,
            Scenario::Evening => 1.3,
        }
    }

    /// 1-based index (Night=1 .. Evening=4).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Scenario> {
        Scenario::ALL
            .get(i.wrapping_sub(1))
            .copied()
            .ok_or_else(|| CoreError::InvalidInput(format!("scenario index {i} not in 1..=4")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Night => "night",
            Scenario::Morning => "morning",
            Scenario::Afternoon => "afternoon",
            Scenario::Evening => "evening",
        }
    }
}

/// Synchronous machine parameters for one generator node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Governor droop gain A (p.u. per rad/s of frequency deviation).
    pub droop_a: f64,
    /// Voltage transient time constant S (s).
    pub transient_time_s: f64,
    /// Machine reactance X (p.u.).
    pub reactance_x: f64,
    /// Field voltage E_f (p.u.).
    pub field_voltage_ef: f64,
    /// Nominal maximum power output (p.u.).
    pub p_max: f64,
    /// Inertia contribution M (p.u. s^2); the system inertia is the sum over
    /// connected machines.
    pub inertia_m: f64,
    /// Reference dispatch at scenario factor 1.0; scenario dispatch scales it.
    pub p_equilibrium: f64,
    /// Load served directly at this generator bus, if any (aggregated-network
    /// artifact). Attackable, but carries no load-shedding relay.
    #[serde(default)]
    pub colocated_load: Option<LoadParams>,
    /// Excluded from N-1 contingency sweeps (e.g. an aggregated equivalent
    /// standing in for an external interconnection, not a unit that can trip).
    #[serde(default)]
    pub n1_exempt: bool,
}

/// Parameters for one load bus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadParams {
    /// Fixed maximum magnitude of connected load P^TL (p.u.).
    pub p_total_tl: f64,
    /// Pre-scenario base equilibrium load (p.u.).
    pub p_equilibrium_base: f64,
    /// Voltage transient time constant S (s). Ignored for co-located loads
    /// (the machine's constants govern the bus).
    pub transient_time_s: f64,
    /// Bus reactance X (p.u.). Ignored for co-located loads.
    pub reactance_x: f64,
    /// Field voltage E_f (p.u.). Ignored for co-located loads.
    pub field_voltage_ef: f64,
}

/// Immutable network description. Read-only after construction; safe to share
/// across parallel chains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub n_gen: usize,
    pub n_load: usize,
    /// (n_gen+n_load) square symmetric susceptance matrix, negative-Laplacian
    /// convention: off-diagonals >= 0, zero row sums while all lines are in.
    pub susceptance_b: DMatrix<f64>,
    /// Uniform frequency damping D (p.u. per rad/s).
    pub damping_d: f64,
    /// Governor deadband half-width W (rad/s); no droop response inside it.
    pub governor_deadband_w: f64,
    pub generators: Vec<GeneratorParams>,
    pub loads: Vec<LoadParams>,
    /// Inter-area lines subject to flow tripping, as (i, j) node pairs, i < j.
    pub interconnectors: Vec<(usize, usize)>,
    /// Seed flow threshold P^phi (p.u.); calibration produces the operative value.
    pub line_threshold_pphi: f64,
    /// Angle reference node for the equilibrium solve.
    pub reference_node: usize,
}

/// Per-node parameter vectors in integrator layout, assembled once per run.
#[derive(Clone, Debug)]
pub struct NodeArrays {
    /// Machine inertia per generator.
    pub inertia_m: Vec<f64>,
    /// Governor droop per generator.
    pub droop_a: Vec<f64>,
    /// Generation cap per generator.
    pub p_max: Vec<f64>,
    /// Voltage time constant per node.
    pub transient_time_s: Vec<f64>,
    /// Reactance per node.
    pub reactance_x: Vec<f64>,
    /// Field voltage per node.
    pub field_voltage_ef: Vec<f64>,
    /// Maximum connected load per node (0 where no load).
    pub p_total_tl: Vec<f64>,
    /// Base (factor-1) load per node (0 where no load).
    pub base_load: Vec<f64>,
}

impl Network {
    pub fn n_total(&self) -> usize {
        self.n_gen + self.n_load
    }

    /// Base (pre-scenario) load at a node; zero where no load is connected.
    pub fn base_load(&self, node: usize) -> f64 {
        if node < self.n_gen {
            self.generators[node]
                .colocated_load
                .as_ref()
                .map_or(0.0, |l| l.p_equilibrium_base)
        } else {
            self.loads[node - self.n_gen].p_equilibrium_base
        }
    }

    /// Maximum connected load P^TL at a node; zero where no load is connected.
    pub fn total_load_tl(&self, node: usize) -> f64 {
        if node < self.n_gen {
            self.generators[node]
                .colocated_load
                .as_ref()
                .map_or(0.0, |l| l.p_total_tl)
        } else {
            self.loads[node - self.n_gen].p_total_tl
        }
    }

    /// Nodes with nonzero base load, ascending. Attack matrices index rows in
    /// this order.
    pub fn attack_surface(&self) -> Vec<usize> {
        (0..self.n_total()).filter(|&i| self.base_load(i) > 0.0).collect()
    }

    /// Pure load nodes (`n_gen..`): the only nodes monitored by UFLS/UVLS.
    pub fn relay_nodes(&self) -> std::ops::Range<usize> {
        self.n_gen..self.n_total()
    }

    pub fn node_arrays(&self) -> NodeArrays {
        let n = self.n_total();
        let mut arrays = NodeArrays {
            inertia_m: Vec::with_capacity(self.n_gen),
            droop_a: Vec::with_capacity(self.n_gen),
            p_max: Vec::with_capacity(self.n_gen),
            transient_time_s: Vec::with_capacity(n),
            reactance_x: Vec::with_capacity(n),
            field_voltage_ef: Vec::with_capacity(n),
            p_total_tl: Vec::with_capacity(n),
            base_load: Vec::with_capacity(n),
        };
        for g in &self.generators {
            arrays.inertia_m.push(g.inertia_m);
            arrays.droop_a.push(g.droop_a);
            arrays.p_max.push(g.p_max);
            arrays.transient_time_s.push(g.transient_time_s);
            arrays.reactance_x.push(g.reactance_x);
            arrays.field_voltage_ef.push(g.field_voltage_ef);
        }
        for l in &self.loads {
            arrays.transient_time_s.push(l.transient_time_s);
            arrays.reactance_x.push(l.reactance_x);
            arrays.field_voltage_ef.push(l.field_voltage_ef);
        }
        for i in 0..n {
            arrays.p_total_tl.push(self.total_load_tl(i));
            arrays.base_load.push(self.base_load(i));
        }
        arrays
    }

    /// Structural and parameter validation; called on every deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_total();
        let schema = |msg: String| Err(CoreError::Schema(msg));
        if self.generators.len() != self.n_gen {
            return schema(format!(
                "{} generator entries, n_gen = {}",
                self.generators.len(),
                self.n_gen
            ));
        }
        if self.loads.len() != self.n_load {
            return schema(format!("{} load entries, n_load = {}", self.loads.len(), self.n_load));
        }
        if self.susceptance_b.nrows() != n || self.susceptance_b.ncols() != n {
            return schema(format!(
                "susceptance matrix is {}x{}, expected {n}x{n}",
                self.susceptance_b.nrows(),
                self.susceptance_b.ncols()
            ));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.susceptance_b[(i, j)] - self.susceptance_b[(j, i)]).abs() > 1e-9 {
                    return schema(format!("susceptance matrix asymmetric at ({i},{j})"));
                }
            }
        }
        if self.reference_node >= n {
            return schema(format!("reference node {} out of range", self.reference_node));
        }
        for (i, g) in self.generators.iter().enumerate() {
            if !(g.p_max > 0.0 && g.transient_time_s > 0.0 && g.inertia_m > 0.0) {
                return schema(format!("generator {i}: p_max, S, M must be positive"));
            }
            if !(0.0 <= g.p_equilibrium && g.p_equilibrium <= g.p_max) {
                return schema(format!("generator {i}: p_equilibrium outside [0, p_max]"));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if !(0.0 <= l.p_equilibrium_base && l.p_equilibrium_base <= l.p_total_tl) {
                return schema(format!("load {i}: base load outside [0, P^TL]"));
            }
            if l.transient_time_s <= 0.0 {
                return schema(format!("load {i}: transient time must be positive"));
            }
        }
        for g in &self.generators {
            if let Some(l) = &g.colocated_load {
                if !(0.0 <= l.p_equilibrium_base && l.p_equilibrium_base <= l.p_total_tl) {
                    return schema("co-located load outside [0, P^TL]".to_string());
                }
            }
        }
        for &(i, j) in &self.interconnectors {
            if i >= j || j >= n {
                return schema(format!("interconnector ({i},{j}) malformed"));
            }
            if self.susceptance_b[(i, j)].abs() <= 1e-9 {
                return schema(format!("interconnector ({i},{j}) has no line in B"));
            }
        }
        if !(self.governor_deadband_w >= 0.0 && self.damping_d >= 0.0) {
            return schema("damping and deadband must be nonnegative".to_string());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let network: Network = serde_json::from_str(text)?;
        network.validate()?;
        Ok(network)
    }

    pub fn load(path: &std::path::Path) -> Result<Network> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| {
            CoreError::Schema(format!("{}: {e}", path.display()))
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Scenario equilibrium loads P^eq per node: factor-scaled base, capped at P^TL.
pub fn apply_scenario(network: &Network, tau: Scenario) -> DVector<f64> {
    let n = network.n_total();
    DVector::from_fn(n, |i, _| {
        (network.base_load(i) * tau.factor()).min(network.total_load_tl(i))
    })
}

/// Generator dispatch proportional to p_max, balancing the given scenario loads.
pub fn dispatch(network: &Network, p_eq: &DVector<f64>) -> Result<DVector<f64>> {
    let total_load: f64 = p_eq.sum();
    let capacity: f64 = network.generators.iter().map(|g| g.p_max).sum();
    if total_load > capacity {
        return Err(CoreError::CapacityExceeded { load: total_load, capacity });
    }
    let share = total_load / capacity;
    Ok(DVector::from_iterator(
        network.n_gen,
        network.generators.iter().map(|g| g.p_max * share),
    ))
}

/// Electrical coupling sums for all nodes in two matrix-vector products:
/// `sin_c[i] = sum_j B_ij E_j sin(d_i - d_j)`,
/// `cos_c[i] = sum_j B_ij E_j cos(d_i - d_j)`.
/// Uses a = E cos d, b = E sin d, so sin_c = sin d * (B a) - cos d * (B b)
/// and cos_c = cos d * (B a) + sin d * (B b).
pub(crate) fn coupling(
    b: &DMatrix<f64>,
    delta: &DVector<f64>,
    e: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = delta.len();
    let mut sin_d = DVector::zeros(n);
    let mut cos_d = DVector::zeros(n);
    for i in 0..n {
        let (s, c) = delta[i].sin_cos();
        sin_d[i] = s;
        cos_d[i] = c;
    }
    let a = e.component_mul(&cos_d);
    let bb = e.component_mul(&sin_d);
    let ba = b * a;
    let bbv = b * bb;
    let sin_c = sin_d.component_mul(&ba) - cos_d.component_mul(&bbv);
    let cos_c = cos_d.component_mul(&ba) + sin_d.component_mul(&bbv);
    (sin_c, cos_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn scenario_factors_match_daily_cycle() {
        assert_eq!(Scenario::Night.factor(), 0.4);
        assert_eq!(Scenario::Morning.factor(), 1.0);
        assert_eq!(Scenario::Afternoon.factor(), 0.85);
        assert_eq!(Scenario::Evening.factor(), 1.3);
        for tau in Scenario::ALL {
            assert_eq!(Scenario::from_index(tau.index()).unwrap(), tau);
        }
    }

    #[test]
    fn apply_scenario_morning_is_identity_on_base() {
        let network = ktas();
        let p = apply_scenario(&network, Scenario::Morning);
        for (k, &node) in network.attack_surface().iter().enumerate() {
            assert_abs_diff_eq!(p[node], network.base_load(node), epsilon = 1e-15);
            let _ = k;
        }
    }

    #[test]
    fn apply_scenario_night_scales_by_0_4() {
        let network = ktas();
        let p = apply_scenario(&network, Scenario::Night);
        for node in network.attack_surface() {
            assert_abs_diff_eq!(p[node], 0.4 * network.base_load(node), epsilon = 1e-15);
        }
    }

    #[test]
    fn apply_scenario_caps_at_total_connected_load() {
        let mut network = ktas();
        // Base load at 90% of P^TL makes the evening factor hit the cap.
        let tl = network.loads[0].p_total_tl;
        network.loads[0].p_equilibrium_base = 0.9 * tl;
        let p = apply_scenario(&network, Scenario::Evening);
        assert_abs_diff_eq!(p[network.n_gen], tl, epsilon = 1e-15);
    }

    #[test]
    fn dispatch_balances_and_respects_caps() {
        let network = ktas();
        for tau in Scenario::ALL {
            let p_eq = apply_scenario(&network, tau);
            let pe = dispatch(&network, &p_eq).unwrap();
            assert_abs_diff_eq!(pe.sum(), p_eq.sum(), epsilon = 1e-12);
            for (g, params) in network.generators.iter().enumerate() {
                assert!(pe[g] <= params.p_max + 1e-12);
            }
        }
    }

    #[test]
    fn dispatch_rejects_load_above_capacity() {
        let network = ktas();
        let n = network.n_total();
        let p_eq = DVector::from_element(n, 10.0);
        assert!(matches!(
            dispatch(&network, &p_eq),
            Err(CoreError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn presets_validate_and_have_laplacian_structure() {
        for network in [ktas(), ieee39()] {
            network.validate().unwrap();
            let b = &network.susceptance_b;
            let n = network.n_total();
            for i in 0..n {
                let row_sum: f64 = (0..n).map(|j| b[(i, j)]).sum();
                assert!(row_sum.abs() < 1e-9, "{}: row {i} sums to {row_sum}", network.name);
                for j in 0..n {
                    if i != j {
                        assert!(b[(i, j)] >= 0.0, "{}: negative off-diagonal", network.name);
                    }
                }
            }
        }
    }

    #[test]
    fn ieee39_reduction_matches_probe_constants() {
        let network = ieee39();
        assert_eq!(network.n_total(), 27);
        assert_eq!(network.n_gen, 10);
        assert_eq!(network.interconnectors.len(), 12);
        assert_eq!(network.attack_surface().len(), 19);
        // Strongest inter-area coupling: retained buses 3-4 (nodes 10, 11).
        assert_abs_diff_eq!(network.susceptance_b[(10, 11)], 46.95, epsilon = 0.01);
        let total_base: f64 = (0..27).map(|i| network.base_load(i)).sum();
        assert_abs_diff_eq!(total_base, 44.2836, epsilon = 1e-3);
    }

    #[test]
    fn network_json_roundtrip_preserves_structure() {
        let network = ieee39();
        let text = serde_json::to_string(&network).unwrap();
        let back = Network::from_json(&text).unwrap();
        assert_eq!(back.n_total(), network.n_total());
        assert_abs_diff_eq!(
            (&back.susceptance_b - &network.susceptance_b).norm(),
            0.0,
            epsilon = 0.0
        );
        assert_eq!(back.interconnectors, network.interconnectors);
    }

    #[test]
    fn malformed_network_rejected_with_schema_error() {
        let mut network = ktas();
        network.interconnectors.push((0, 3)); // no line between nodes 0 and 3
        assert!(matches!(network.validate(), Err(CoreError::Schema(_))));
    }

    proptest! {
        // Monotonicity: larger scenario factor never decreases any node's load.
        #[test]
        fn scenario_loads_monotone_in_factor(scale in 0.1f64..2.0) {
            let mut network = ktas();
            for l in &mut network.loads {
                l.p_equilibrium_base *= scale;
                l.p_total_tl *= 2.0 * scale;
            }
            let mut by_factor: Vec<(f64, DVector<f64>)> = Scenario::ALL
                .iter()
                .map(|&tau| (tau.factor(), apply_scenario(&network, tau)))
                .collect();
            by_factor.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for pair in by_factor.windows(2) {
                for i in 0..network.n_total() {
                    prop_assert!(pair[0].1[i] <= pair[1].1[i] + 1e-15);
                }
            }
        }
    }
}
