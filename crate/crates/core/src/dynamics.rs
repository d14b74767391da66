//! Hybrid integration of the grid dynamics.
//!
//! Continuous part, per node i (third-order machine model; loads follow the
//! same template without generation or governor):
//!
//! ```text
//! M(psi) w_i' = psi_i P^G_i - P^L_i - E_i sum_j B_ij E_j sin(d_i - d_j) - D w_i
//! S_i     E_i' = psi_i (E_f,i - v_i) - E_i + X_i sum_j B_ij E_j cos(d_i - d_j)
//! rho_i'       = -A_i w_i   outside the governor deadband, else 0
//! ```
//!
//! with P^G_i = min(P_i^max, P_i^e + rho_i), system inertia M(psi) the sum of
//! connected machine inertias, and P^L the attack-realized load scaled by the
//! shedding factor iota. The voltage-regulator input v_i is a proportional
//! term with gain zero by default (a documented simplification).
//!
//! Discrete part: at every accepted step the protection module inspects the
//! state; a triggered relay is located in time by bisection (re-integrating
//! from the step start), applied as a discontinuity, and the run resumes.
//! Steps are clipped so attack change times always land on step boundaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::attack::{commanded_load, realized_net_load, AttackSpec};
use crate::error::{CoreError, Result};
use crate::grid::{apply_scenario, dispatch, Network, NodeArrays, Scenario};
use crate::protection::{effective_load_factor, inspect, ERConfig, EREvent, EventKind};

/// Full hybrid state: continuous fields plus relay indicators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemState {
    pub delta: DVector<f64>,
    pub delta_dot: DVector<f64>,
    pub voltage_e: DVector<f64>,
    /// Governor response per generator.
    pub governor_rho: DVector<f64>,
    /// Generator connection indicators; false once shed, never restored.
    pub psi: Vec<bool>,
    /// Interconnector indicators, indexed like `Network::interconnectors`.
    pub omega_line: Vec<bool>,
    /// UFLS stages consumed per node (0..=4; always 0 on generator nodes).
    pub ufls_count_f: Vec<u8>,
    /// UVLS one-shot flag per node.
    pub uvls_flag_v: Vec<bool>,
    /// Seconds the node voltage has been continuously below the UVLS level.
    pub uvls_timer: Vec<f64>,
    pub time: f64,
}

impl SystemState {
    /// Rest state at an equilibrium point: zero frequency deviation, zero
    /// governor response, everything connected.
    pub fn at_rest(network: &Network, delta: DVector<f64>, voltage_e: DVector<f64>) -> SystemState {
        let n = network.n_total();
        SystemState {
            delta,
            delta_dot: DVector::zeros(n),
            voltage_e,
            governor_rho: DVector::zeros(network.n_gen),
            psi: vec![true; network.n_gen],
            omega_line: vec![true; network.interconnectors.len()],
            ufls_count_f: vec![0; n],
            uvls_flag_v: vec![false; n],
            uvls_timer: vec![0.0; n],
            time: 0.0,
        }
    }

    /// System inertia M(psi): connected machines only.
    pub fn system_inertia(&self, network: &Network) -> f64 {
        self.psi
            .iter()
            .zip(&network.generators)
            .filter(|(&on, _)| on)
            .map(|(_, g)| g.inertia_m)
            .sum()
    }
}

/// Single-component outage applied at t = 0 for N-1 studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contingency {
    GeneratorOutage(usize),
    InterconnectorOutage(usize),
}

impl Contingency {
    pub fn apply(self, state: &mut SystemState) {
        match self {
            Contingency::GeneratorOutage(g) => state.psi[g] = false,
            Contingency::InterconnectorOutage(k) => state.omega_line[k] = false,
        }
    }

    pub fn label(self, network: &Network) -> String {
        match self {
            Contingency::GeneratorOutage(g) => format!("generator {g}"),
            Contingency::InterconnectorOutage(k) => {
                let (i, j) = network.interconnectors[k];
                format!("interconnector {k} ({i}-{j})")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Rk4,
    Rk45,
}

/// Aggregation used for the single "system frequency" reported at attack
/// change times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SysFreqAggregate {
    /// Inertia-weighted mean over connected generators (center of inertia).
    #[default]
    InertiaWeighted,
    /// Plain mean over connected generators.
    GeneratorMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step_dt: f64,
    pub method: Method,
    /// Width to which an event time is bisected (s).
    pub event_tolerance: f64,
    pub t_max: f64,
    /// Event-storm guard; exceeding it sets the truncation flag.
    pub max_events: usize,
    /// False disables relay action (used by the calibration sweep, which only
    /// observes excursion peaks).
    pub relays_armed: bool,
    /// Stop after the first relay event (sampling-throughput mode; cascade
    /// totals beyond the first event are then truncated).
    pub stop_at_first_event: bool,
    /// Record every k-th step into the trajectory; 0 records only events and
    /// the endpoints.
    pub trajectory_decimation: usize,
    /// Local error tolerance for the adaptive method.
    pub rk45_tol: f64,
    pub sys_freq: SysFreqAggregate,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step_dt: 1e-3,
            method: Method::Rk4,
            event_tolerance: 1e-4,
            t_max: crate::attack::T_MAX,
            max_events: 256,
            relays_armed: true,
            stop_at_first_event: false,
            trajectory_decimation: 0,
            rk45_tol: 1e-8,
            sys_freq: SysFreqAggregate::InertiaWeighted,
        }
    }
}

impl IntegratorConfig {
    /// Step sizes tuned per shipped network size.
    pub fn default_for(network: &Network) -> IntegratorConfig {
        IntegratorConfig {
            step_dt: if network.n_total() > 10 { 2e-3 } else { 1e-3 },
            ..IntegratorConfig::default()
        }
    }
}

/// Time derivative of the continuous fields.
#[derive(Clone, Debug)]
pub struct Derivatives {
    pub d_delta: DVector<f64>,
    pub d_delta_dot: DVector<f64>,
    pub d_voltage_e: DVector<f64>,
    pub d_governor_rho: DVector<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub delta: Vec<f64>,
    pub delta_dot: Vec<f64>,
    pub voltage_e: Vec<f64>,
    pub governor_rho: Vec<f64>,
}

/// System frequency sampled at one attack change time.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChangeSample {
    pub time: f64,
    pub sys_freq: f64,
}

/// Relay-free excursion extrema over a run; the calibration inputs.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PeakStats {
    /// Max |w| over all nodes (equilibrium-fidelity check).
    pub max_abs_omega: f64,
    /// Most negative w over pure load nodes (UFLS exposure).
    pub load_nadir: f64,
    /// Max w over connected generators (OFGS exposure).
    pub gen_zenith: f64,
    /// Max |w'| over connected generators (RIGS exposure).
    pub max_gen_rocof: f64,
    /// Min voltage over pure load nodes (UVLS exposure).
    pub min_load_voltage: f64,
    /// Max |flow| over active interconnectors (line-trip exposure).
    pub max_tie_flow: f64,
    /// Longest continuous sub-0.9 p.u. voltage window on a load node.
    pub max_uvls_window: f64,
}

impl PeakStats {
    fn new() -> PeakStats {
        PeakStats { min_load_voltage: f64::INFINITY, ..PeakStats::default() }
    }

    pub fn fold(&mut self, other: &PeakStats) {
        self.max_abs_omega = self.max_abs_omega.max(other.max_abs_omega);
        self.load_nadir = self.load_nadir.min(other.load_nadir);
        self.gen_zenith = self.gen_zenith.max(other.gen_zenith);
        self.max_gen_rocof = self.max_gen_rocof.max(other.max_gen_rocof);
        self.min_load_voltage = self.min_load_voltage.min(other.min_load_voltage);
        self.max_tie_flow = self.max_tie_flow.max(other.max_tie_flow);
        self.max_uvls_window = self.max_uvls_window.max(other.max_uvls_window);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimOutcome {
    pub final_state: SystemState,
    pub events: Vec<EREvent>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub sys_freq_at_changes: Vec<ChangeSample>,
    pub peaks: PeakStats,
    /// Event storm guard tripped or the run stopped at its first event.
    pub truncated: bool,
    /// All generation disconnected before t_max.
    pub collapsed: bool,
}

/// Continuous state bundle used inside the integrator.
#[derive(Clone, Debug)]
struct Fields {
    d: DVector<f64>,
    w: DVector<f64>,
    e: DVector<f64>,
    rho: DVector<f64>,
}

impl Fields {
    fn from_state(state: &SystemState) -> Fields {
        Fields {
            d: state.delta.clone(),
            w: state.delta_dot.clone(),
            e: state.voltage_e.clone(),
            rho: state.governor_rho.clone(),
        }
    }

    fn write_to(&self, state: &mut SystemState) {
        state.delta.copy_from(&self.d);
        state.delta_dot.copy_from(&self.w);
        state.voltage_e.copy_from(&self.e);
        state.governor_rho.copy_from(&self.rho);
    }

    fn zeros_like(n: usize, n_gen: usize) -> Fields {
        Fields {
            d: DVector::zeros(n),
            w: DVector::zeros(n),
            e: DVector::zeros(n),
            rho: DVector::zeros(n_gen),
        }
    }

    /// self = base + scale * k
    fn set_combo(&mut self, base: &Fields, scale: f64, k: &Fields) {
        for (out, (b, kv)) in [
            (&mut self.d, (&base.d, &k.d)),
            (&mut self.w, (&base.w, &k.w)),
            (&mut self.e, (&base.e, &k.e)),
            (&mut self.rho, (&base.rho, &k.rho)),
        ] {
            out.copy_from(b);
            out.axpy(scale, kv, 1.0);
        }
    }

    fn axpy(&mut self, scale: f64, k: &Fields) {
        self.d.axpy(scale, &k.d, 1.0);
        self.w.axpy(scale, &k.w, 1.0);
        self.e.axpy(scale, &k.e, 1.0);
        self.rho.axpy(scale, &k.rho, 1.0);
    }
}

/// Per-run scratch and parameters; owns the effective susceptance matrix that
/// line trips modify.
struct Engine<'a> {
    network: &'a Network,
    cfg: &'a IntegratorConfig,
    er: &'a ERConfig,
    spec: &'a AttackSpec,
    arrays: NodeArrays,
    b_eff: DMatrix<f64>,
    /// Scenario dispatch per generator.
    pe: DVector<f64>,
    /// Scenario equilibrium load per node.
    p_eq_node: DVector<f64>,
    /// Attack-surface slices of p_eq / P^TL, in eta row order.
    surface: Vec<usize>,
    p_eq_surface: DVector<f64>,
    p_tl_surface: DVector<f64>,
    // workspace
    sin_d: DVector<f64>,
    cos_d: DVector<f64>,
    wa: DVector<f64>,
    wb: DVector<f64>,
    ba: DVector<f64>,
    bb: DVector<f64>,
    sin_c: DVector<f64>,
    cos_c: DVector<f64>,
}

impl<'a> Engine<'a> {
    fn new(
        network: &'a Network,
        spec: &'a AttackSpec,
        er: &'a ERConfig,
        cfg: &'a IntegratorConfig,
    ) -> Result<Engine<'a>> {
        spec.validate_for(network)?;
        let arrays = network.node_arrays();
        let p_eq_node = apply_scenario(network, spec.tau);
        let pe = dispatch(network, &p_eq_node)?;
        let surface = network.attack_surface();
        let p_eq_surface = DVector::from_iterator(surface.len(), surface.iter().map(|&i| p_eq_node[i]));
        let p_tl_surface =
            DVector::from_iterator(surface.len(), surface.iter().map(|&i| arrays.p_total_tl[i]));
        let n = network.n_total();
        Ok(Engine {
            network,
            cfg,
            er,
            spec,
            b_eff: network.susceptance_b.clone(),
            arrays,
            pe,
            p_eq_node,
            surface,
            p_eq_surface,
            p_tl_surface,
            sin_d: DVector::zeros(n),
            cos_d: DVector::zeros(n),
            wa: DVector::zeros(n),
            wb: DVector::zeros(n),
            ba: DVector::zeros(n),
            bb: DVector::zeros(n),
            sin_c: DVector::zeros(n),
            cos_c: DVector::zeros(n),
        })
    }

    /// Zeroes a tripped line and compensates the diagonal so the matrix stays
    /// a negative Laplacian.
    fn drop_line(&mut self, k: usize) {
        let (i, j) = self.network.interconnectors[k];
        let w = self.b_eff[(i, j)];
        self.b_eff[(i, j)] = 0.0;
        self.b_eff[(j, i)] = 0.0;
        self.b_eff[(i, i)] += w;
        self.b_eff[(j, j)] += w;
    }

    /// Pre-shedding realized node loads at time t (clamp law on the attack
    /// surface, equilibrium elsewhere).
    fn realized_loads(&self, t: f64) -> DVector<f64> {
        let mut p_hat = self.p_eq_node.clone();
        let u_hat = commanded_load(self.spec, &self.p_eq_surface, t);
        let realized = realized_net_load(self.spec.nu, &self.p_eq_surface, &self.p_tl_surface, &u_hat);
        for (k, &node) in self.surface.iter().enumerate() {
            p_hat[node] = realized[k];
        }
        p_hat
    }

    /// Post-shedding net loads: iota(F, V) * p_hat.
    fn net_loads(&self, p_hat: &DVector<f64>, f: &[u8], v: &[bool]) -> DVector<f64> {
        DVector::from_fn(p_hat.len(), |i, _| {
            p_hat[i] * effective_load_factor(f[i], v[i])
        })
    }

    /// Current generator outputs psi * min(p_max, p_e + rho).
    fn generation(&self, rho: &DVector<f64>, psi: &[bool]) -> DVector<f64> {
        DVector::from_fn(self.network.n_gen, |g, _| {
            if psi[g] {
                (self.pe[g] + rho[g]).min(self.arrays.p_max[g])
            } else {
                0.0
            }
        })
    }

    fn system_inertia(&self, psi: &[bool]) -> f64 {
        psi.iter()
            .zip(&self.arrays.inertia_m)
            .filter(|(&on, _)| on)
            .map(|(_, m)| m)
            .sum()
    }

    /// Derivative of the continuous fields into `out`.
    fn deriv(
        &mut self,
        fields: &Fields,
        net: &DVector<f64>,
        psi: &[bool],
        m_psi: f64,
        out: &mut Fields,
    ) {
        let n = self.network.n_total();
        let n_gen = self.network.n_gen;
        for i in 0..n {
            let (s, c) = fields.d[i].sin_cos();
            self.sin_d[i] = s;
            self.cos_d[i] = c;
            self.wa[i] = fields.e[i] * c;
            self.wb[i] = fields.e[i] * s;
        }
        self.ba.gemv(1.0, &self.b_eff, &self.wa, 0.0);
        self.bb.gemv(1.0, &self.b_eff, &self.wb, 0.0);
        for i in 0..n {
            self.sin_c[i] = self.sin_d[i] * self.ba[i] - self.cos_d[i] * self.bb[i];
            self.cos_c[i] = self.cos_d[i] * self.ba[i] + self.sin_d[i] * self.bb[i];
        }
        let d = self.network.damping_d;
        let w_band = self.network.governor_deadband_w;
        for i in 0..n {
            let p_gen = if i < n_gen && psi[i] {
                (self.pe[i] + fields.rho[i]).min(self.arrays.p_max[i])
            } else {
                0.0
            };
            let injection = p_gen - net[i];
            out.d[i] = fields.w[i];
            out.w[i] = (injection - fields.e[i] * self.sin_c[i] - d * fields.w[i]) / m_psi;
            // Shed machines lose their field-voltage drive but keep the
            // network-coupled voltage dynamics.
            let psi_full = if i < n_gen && !psi[i] { 0.0 } else { 1.0 };
            out.e[i] = (psi_full * self.arrays.field_voltage_ef[i] - fields.e[i]
                + self.arrays.reactance_x[i] * self.cos_c[i])
                / self.arrays.transient_time_s[i];
        }
        for g in 0..n_gen {
            out.rho[g] = if fields.w[g].abs() > w_band {
                -self.arrays.droop_a[g] * fields.w[g]
            } else {
                0.0
            };
        }
    }

    /// One classical RK4 step of size h; `out` may alias neither input.
    #[allow(clippy::too_many_arguments)]
    fn rk4_step(
        &mut self,
        y: &Fields,
        h: f64,
        net: &DVector<f64>,
        psi: &[bool],
        m_psi: f64,
        scratch: &mut RkScratch,
        out: &mut Fields,
    ) {
        let RkScratch { k1, k2, k3, k4, tmp } = scratch;
        self.deriv(y, net, psi, m_psi, k1);
        tmp.set_combo(y, 0.5 * h, k1);
        self.deriv(tmp, net, psi, m_psi, k2);
        tmp.set_combo(y, 0.5 * h, k2);
        self.deriv(tmp, net, psi, m_psi, k3);
        tmp.set_combo(y, h, k3);
        self.deriv(tmp, net, psi, m_psi, k4);
        out.set_combo(y, h / 6.0, k1);
        out.axpy(h / 3.0, k2);
        out.axpy(h / 3.0, k3);
        out.axpy(h / 6.0, k4);
    }

    /// Interconnector flows (signed, i -> j) for the current topology.
    fn flows(&self, fields: &Fields, active: &[bool]) -> Vec<f64> {
        self.network
            .interconnectors
            .iter()
            .zip(active)
            .map(|(&(i, j), &on)| {
                if on {
                    self.b_eff[(i, j)] * fields.e[i] * fields.e[j] * (fields.d[i] - fields.d[j]).sin()
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn sys_freq(&self, fields: &Fields, psi: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for g in 0..self.network.n_gen {
            if psi[g] {
                let weight = match self.cfg.sys_freq {
                    SysFreqAggregate::InertiaWeighted => self.arrays.inertia_m[g],
                    SysFreqAggregate::GeneratorMean => 1.0,
                };
                num += weight * fields.w[g];
                den += weight;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

struct RkScratch {
    k1: Fields,
    k2: Fields,
    k3: Fields,
    k4: Fields,
    tmp: Fields,
}

impl RkScratch {
    fn new(n: usize, n_gen: usize) -> RkScratch {
        RkScratch {
            k1: Fields::zeros_like(n, n_gen),
            k2: Fields::zeros_like(n, n_gen),
            k3: Fields::zeros_like(n, n_gen),
            k4: Fields::zeros_like(n, n_gen),
            tmp: Fields::zeros_like(n, n_gen),
        }
    }
}

fn check_finite(fields: &Fields, t: f64) -> Result<()> {
    // Divergence guard: |w| beyond any physical excursion counts as blowup
    // before the floats reach infinity.
    const OMEGA_LIMIT: f64 = 1e5;
    for (node, &w) in fields.w.iter().enumerate() {
        if !w.is_finite() || w.abs() > OMEGA_LIMIT {
            return Err(CoreError::NumericalBlowup { time: t, node });
        }
    }
    for (node, &e) in fields.e.iter().enumerate() {
        if !e.is_finite() {
            return Err(CoreError::NumericalBlowup { time: t, node });
        }
    }
    Ok(())
}

/// Public single-evaluation form of the right-hand side; the scenario fixes
/// the dispatch. `net_loads` must already include attack and shedding.
pub fn derivatives(
    state: &SystemState,
    net_loads: &DVector<f64>,
    network: &Network,
    tau: Scenario,
) -> Result<Derivatives> {
    let spec = AttackSpec::zero(network, tau);
    let er = ERConfig::base(network);
    let cfg = IntegratorConfig::default();
    let mut engine = Engine::new(network, &spec, &er, &cfg)?;
    for (k, &on) in state.omega_line.iter().enumerate() {
        if !on {
            engine.drop_line(k);
        }
    }
    let fields = Fields::from_state(state);
    check_finite(&fields, state.time)?;
    let m_psi = engine.system_inertia(&state.psi);
    if m_psi <= 0.0 {
        return Err(CoreError::NumericalBlowup { time: state.time, node: 0 });
    }
    let mut out = Fields::zeros_like(network.n_total(), network.n_gen);
    engine.deriv(&fields, net_loads, &state.psi, m_psi, &mut out);
    Ok(Derivatives {
        d_delta: out.d,
        d_delta_dot: out.w,
        d_voltage_e: out.e,
        d_governor_rho: out.rho,
    })
}

/// Candidate relay activation located inside a step.
struct PendingEvent {
    time: f64,
    kind: EventKind,
    target: usize,
}

/// Integrates from `initial` to `cfg.t_max` under the given attack, applying
/// relay events as discontinuities. Deterministic: identical inputs produce
/// identical outcomes bit for bit.
pub fn integrate_with_events(
    initial: &SystemState,
    spec: &AttackSpec,
    er: &ERConfig,
    network: &Network,
    cfg: &IntegratorConfig,
) -> Result<SimOutcome> {
    let mut engine = Engine::new(network, spec, er, cfg)?;
    let n = network.n_total();
    let n_gen = network.n_gen;

    let mut state = initial.clone();
    state.time = 0.0;
    for (k, &on) in state.omega_line.iter().enumerate() {
        if !on {
            engine.drop_line(k);
        }
    }

    let mut fields = Fields::from_state(&state);
    let mut scratch = RkScratch::new(n, n_gen);
    let mut candidate = Fields::zeros_like(n, n_gen);
    let mut accel = Fields::zeros_like(n, n_gen);

    let mut outcome = SimOutcome {
        final_state: state.clone(),
        events: Vec::new(),
        trajectory: Vec::new(),
        sys_freq_at_changes: Vec::new(),
        peaks: PeakStats::new(),
        truncated: false,
        collapsed: false,
    };

    let mut next_change = 1usize; // attack_times[0] == 0 is active from the start
    let mut h_adaptive = cfg.step_dt;
    let mut step_count = 0usize;
    // Nodes that consumed a UFLS stage at the current instant; blocks a second
    // stage within the same inspection time.
    let mut ufls_just_fired: Vec<f64> = vec![f64::NEG_INFINITY; n];

    record_point(&mut outcome.trajectory, state.time, &fields);
    outcome
        .sys_freq_at_changes
        .push(ChangeSample { time: 0.0, sys_freq: engine.sys_freq(&fields, &state.psi) });

    // Relay conditions may already hold at t = 0 (e.g. a violent first attack
    // column); resolve them before stepping.
    let mut stop = false;
    resolve_instant_events(
        &mut engine,
        &mut state,
        &mut fields,
        &mut accel,
        &mut outcome,
        &mut ufls_just_fired,
        &mut stop,
    )?;

    while !stop && state.time < cfg.t_max - 1e-12 {
        let m_psi = engine.system_inertia(&state.psi);
        if m_psi <= 0.0 {
            outcome.collapsed = true;
            break;
        }

        // Clip the step to the next attack change so load steps land exactly
        // on boundaries.
        let t0 = state.time;
        let boundary = if next_change < spec.n_changes {
            spec.attack_times[next_change]
        } else {
            cfg.t_max
        };
        let t_limit = boundary.min(cfg.t_max);
        let h_nominal = match cfg.method {
            Method::Rk4 => cfg.step_dt,
            Method::Rk45 => h_adaptive,
        };
        let mut h = h_nominal.min(t_limit - t0);
        if h <= 0.0 {
            // Exactly on a boundary: advance the schedule pointer.
            if next_change < spec.n_changes {
                next_change += 1;
                outcome.sys_freq_at_changes.push(ChangeSample {
                    time: t0,
                    sys_freq: engine.sys_freq(&fields, &state.psi),
                });
            }
            continue;
        }

        let p_hat = engine.realized_loads(t0);
        let net = engine.net_loads(&p_hat, &state.ufls_count_f, &state.uvls_flag_v);

        match cfg.method {
            Method::Rk4 => {
                engine.rk4_step(&fields, h, &net, &state.psi, m_psi, &mut scratch, &mut candidate);
            }
            Method::Rk45 => {
                // Step doubling: accept when the h-step agrees with two h/2
                // steps within tolerance; otherwise halve. Deterministic.
                loop {
                    engine.rk4_step(&fields, h, &net, &state.psi, m_psi, &mut scratch, &mut candidate);
                    let mut half = Fields::zeros_like(n, n_gen);
                    let mut full = Fields::zeros_like(n, n_gen);
                    engine.rk4_step(&fields, 0.5 * h, &net, &state.psi, m_psi, &mut scratch, &mut half);
                    engine.rk4_step(&half, 0.5 * h, &net, &state.psi, m_psi, &mut scratch, &mut full);
                    let err = (&candidate.w - &full.w).amax().max((&candidate.e - &full.e).amax());
                    if err <= cfg.rk45_tol || h <= 1e-6 {
                        candidate = full; // keep the finer solution
                        if err < cfg.rk45_tol / 32.0 {
                            h_adaptive = (h * 2.0).min(10.0 * cfg.step_dt);
                        } else {
                            h_adaptive = h;
                        }
                        break;
                    }
                    h *= 0.5;
                }
            }
        }
        let t1 = if (t0 + h - t_limit).abs() < 1e-12 { t_limit } else { t0 + h };
        check_finite(&candidate, t1)?;

        // Inspect the candidate endpoint. Loads at the endpoint follow the
        // step function, so a boundary endpoint already sees the new column.
        let p_hat_end = engine.realized_loads(t1);
        let net_end = engine.net_loads(&p_hat_end, &state.ufls_count_f, &state.uvls_flag_v);
        engine.deriv(&candidate, &net_end, &state.psi, m_psi, &mut accel);

        let pending = if cfg.relays_armed {
            find_earliest_event(
                &mut engine,
                &state,
                &fields,
                &candidate,
                &accel,
                t0,
                t1,
                h,
                &net,
                &net_end,
                &p_hat_end,
                m_psi,
                &ufls_just_fired,
            )
        } else {
            None
        };

        if let Some(pending) = pending {
            let te = pending.time;
            let hp = te - t0;
            if hp > 1e-12 {
                engine.rk4_step(&fields, hp, &net, &state.psi, m_psi, &mut scratch, &mut candidate);
                std::mem::swap(&mut fields, &mut candidate);
            }
            advance_uvls_timers(&mut state, &fields, engine.er, hp.max(0.0), &mut outcome.peaks, network);
            state.time = te;
            fields.write_to(&mut state);
            apply_event(
                &mut engine,
                &mut state,
                &fields,
                &mut accel,
                pending,
                &mut outcome,
                &mut ufls_just_fired,
                &mut stop,
            )?;
            // Conditions still violated right after the discontinuity fire at
            // the same instant (cascade), one inspection pass at a time.
            if !stop {
                resolve_instant_events(
                    &mut engine,
                    &mut state,
                    &mut fields,
                    &mut accel,
                    &mut outcome,
                    &mut ufls_just_fired,
                    &mut stop,
                )?;
            }
            continue;
        }

        // Accept the full step.
        std::mem::swap(&mut fields, &mut candidate);
        advance_uvls_timers(&mut state, &fields, engine.er, h, &mut outcome.peaks, network);
        state.time = t1;
        fields.write_to(&mut state);
        step_count += 1;

        update_peaks(&mut outcome.peaks, &engine, &fields, &accel, &state, network);

        if cfg.trajectory_decimation > 0 && step_count % cfg.trajectory_decimation == 0 {
            record_point(&mut outcome.trajectory, t1, &fields);
        }
        if next_change < spec.n_changes && (t1 - spec.attack_times[next_change]).abs() < 1e-12 {
            next_change += 1;
            outcome
                .sys_freq_at_changes
                .push(ChangeSample { time: t1, sys_freq: engine.sys_freq(&fields, &state.psi) });
        }
    }

    fields.write_to(&mut state);
    record_point(&mut outcome.trajectory, state.time, &fields);
    outcome.final_state = state;
    Ok(outcome)
}

fn record_point(trajectory: &mut Vec<TrajectoryPoint>, time: f64, fields: &Fields) {
    trajectory.push(TrajectoryPoint {
        time,
        delta: fields.d.iter().copied().collect(),
        delta_dot: fields.w.iter().copied().collect(),
        voltage_e: fields.e.iter().copied().collect(),
        governor_rho: fields.rho.iter().copied().collect(),
    });
}

/// Accrues the UVLS hold timers over an accepted sub-step of width h, using
/// the endpoint voltages, and tracks the longest held window.
fn advance_uvls_timers(
    state: &mut SystemState,
    fields: &Fields,
    er: &ERConfig,
    h: f64,
    peaks: &mut PeakStats,
    network: &Network,
) {
    for i in network.relay_nodes() {
        if fields.e[i] < er.uvls_voltage {
            state.uvls_timer[i] += h;
        } else {
            state.uvls_timer[i] = 0.0;
        }
        peaks.max_uvls_window = peaks.max_uvls_window.max(state.uvls_timer[i]);
    }
}

fn update_peaks(
    peaks: &mut PeakStats,
    engine: &Engine,
    fields: &Fields,
    accel: &Fields,
    state: &SystemState,
    network: &Network,
) {
    peaks.max_abs_omega = peaks.max_abs_omega.max(fields.w.amax());
    for g in 0..network.n_gen {
        if state.psi[g] {
            peaks.gen_zenith = peaks.gen_zenith.max(fields.w[g]);
            peaks.max_gen_rocof = peaks.max_gen_rocof.max(accel.w[g].abs());
        }
    }
    for i in network.relay_nodes() {
        peaks.load_nadir = peaks.load_nadir.min(fields.w[i]);
        peaks.min_load_voltage = peaks.min_load_voltage.min(fields.e[i]);
    }
    let flows = engine.flows(fields, &state.omega_line);
    for f in flows {
        peaks.max_tie_flow = peaks.max_tie_flow.max(f.abs());
    }
}

/// Scans the step (t0, t1] for the earliest relay activation. Conditions are
/// evaluated through `protection::inspect`; the activation time is bisected
/// by re-integrating from the accepted step start.
#[allow(clippy::too_many_arguments)]
fn find_earliest_event(
    engine: &mut Engine,
    state: &SystemState,
    fields_t0: &Fields,
    fields_t1: &Fields,
    accel_t1: &Fields,
    t0: f64,
    t1: f64,
    h: f64,
    net_t0: &DVector<f64>,
    net_t1: &DVector<f64>,
    p_hat_t1: &DVector<f64>,
    m_psi: f64,
    ufls_just_fired: &[f64],
) -> Option<PendingEvent> {
    let network = engine.network;
    let n = network.n_total();
    let n_gen = network.n_gen;

    // Probe state at the endpoint with projected UVLS timers.
    let mut probe = state.clone();
    probe.time = t1;
    fields_t1.write_to(&mut probe);
    for i in network.relay_nodes() {
        probe.uvls_timer[i] = if fields_t1.e[i] < engine.er.uvls_voltage {
            state.uvls_timer[i] + h
        } else {
            0.0
        };
    }
    let flows = engine.flows(fields_t1, &state.omega_line);
    let p_gen = engine.generation(&fields_t1.rho, &state.psi);
    let rocof: Vec<f64> = (0..n).map(|i| accel_t1.w[i]).collect();
    let candidates = inspect(&probe, &rocof, &flows, p_hat_t1, &p_gen, network, engine.er);
    let _ = net_t1;
    if candidates.is_empty() {
        return None;
    }

    let mut best: Option<PendingEvent> = None;
    let mut scratch = RkScratch::new(n, n_gen);
    let mut sub = Fields::zeros_like(n, n_gen);
    let mut sub_accel = Fields::zeros_like(n, n_gen);

    for cand in candidates {
        let te = if cand.kind == EventKind::Ufls && ufls_just_fired[cand.target] == t0 {
            // One stage per inspection: the next stage waits for the step end.
            t1
        } else if cand.kind == EventKind::Uvls {
            // Timer events have a closed-form activation time.
            t0 + (engine.er.uvls_hold - state.uvls_timer[cand.target]).max(0.0)
        } else {
            // Bisect: condition false at t0 (previous inspections were clean),
            // true at t1.
            let holds_at = |engine: &mut Engine,
                            scratch: &mut RkScratch,
                            sub: &mut Fields,
                            sub_accel: &mut Fields,
                            ts: f64| {
                if ts <= t0 + 1e-15 {
                    return condition_holds(
                        engine, state, fields_t0, net_t0, m_psi, t0, &cand,
                        scratch, sub_accel,
                    );
                }
                engine.rk4_step(fields_t0, ts - t0, net_t0, &state.psi, m_psi, scratch, sub);
                let p_hat_s = engine.realized_loads(ts);
                let net_s = engine.net_loads(&p_hat_s, &state.ufls_count_f, &state.uvls_flag_v);
                condition_holds(engine, state, sub, &net_s, m_psi, ts, &cand, scratch, sub_accel)
            };
            if holds_at(engine, &mut scratch, &mut sub, &mut sub_accel, t0) {
                t0
            } else {
                let mut lo = t0;
                let mut hi = t1;
                while hi - lo > engine.cfg.event_tolerance {
                    let mid = 0.5 * (lo + hi);
                    if holds_at(engine, &mut scratch, &mut sub, &mut sub_accel, mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        };
        let better = match &best {
            None => true,
            Some(b) => {
                (te, cand.kind, cand.target) < (b.time, b.kind, b.target)
            }
        };
        if better {
            best = Some(PendingEvent { time: te, kind: cand.kind, target: cand.target });
        }
    }
    best
}

/// Evaluates one relay condition on a sub-step state.
#[allow(clippy::too_many_arguments)]
fn condition_holds(
    engine: &mut Engine,
    state: &SystemState,
    fields: &Fields,
    net: &DVector<f64>,
    m_psi: f64,
    _ts: f64,
    cand: &EREvent,
    _scratch: &mut RkScratch,
    accel: &mut Fields,
) -> bool {
    match cand.kind {
        EventKind::Rigs => {
            engine.deriv(fields, net, &state.psi, m_psi, accel);
            accel.w[cand.target].abs() > engine.er.rocof_threshold
        }
        EventKind::Ofgs => fields.w[cand.target] > engine.er.overfreq_threshold,
        EventKind::Ufls => {
            let stage = state.ufls_count_f[cand.target] as usize;
            stage < 4 && fields.w[cand.target] < engine.er.ufls_thresholds_fu[stage]
        }
        EventKind::Uvls => unreachable!("timer events are located analytically"),
        EventKind::Line => {
            let (i, j) = engine.network.interconnectors[cand.target];
            let flow = engine.b_eff[(i, j)] * fields.e[i] * fields.e[j] * (fields.d[i] - fields.d[j]).sin();
            flow.abs() > engine.er.line_threshold_pphi
        }
    }
}

/// Applies a located event to the state/topology and logs it.
#[allow(clippy::too_many_arguments)]
fn apply_event(
    engine: &mut Engine,
    state: &mut SystemState,
    fields: &Fields,
    accel: &mut Fields,
    pending: PendingEvent,
    outcome: &mut SimOutcome,
    ufls_just_fired: &mut [f64],
    stop: &mut bool,
) -> Result<()> {
    let te = pending.time;
    let p_hat = engine.realized_loads(te);
    let magnitude = match pending.kind {
        EventKind::Rigs | EventKind::Ofgs => {
            let p_gen = engine.generation(&fields.rho, &state.psi);
            p_gen[pending.target]
        }
        EventKind::Ufls => engine.er.ufls_fraction * p_hat[pending.target],
        EventKind::Uvls => engine.er.uvls_fraction * p_hat[pending.target],
        EventKind::Line => {
            let (i, j) = engine.network.interconnectors[pending.target];
            (engine.b_eff[(i, j)] * fields.e[i] * fields.e[j] * (fields.d[i] - fields.d[j]).sin())
                .abs()
        }
    };
    match pending.kind {
        EventKind::Rigs | EventKind::Ofgs => state.psi[pending.target] = false,
        EventKind::Ufls => {
            state.ufls_count_f[pending.target] += 1;
            ufls_just_fired[pending.target] = te;
        }
        EventKind::Uvls => state.uvls_flag_v[pending.target] = true,
        EventKind::Line => {
            state.omega_line[pending.target] = false;
            engine.drop_line(pending.target);
        }
    }
    outcome.events.push(EREvent {
        time: te,
        kind: pending.kind,
        target: pending.target,
        magnitude,
    });
    record_point(&mut outcome.trajectory, te, fields);
    let _ = accel;
    if outcome.events.len() >= engine.cfg.max_events {
        outcome.truncated = true;
        *stop = true;
    }
    if engine.cfg.stop_at_first_event {
        outcome.truncated = true;
        *stop = true;
    }
    Ok(())
}


/// Fires every relay whose condition already holds at the current instant,
/// one inspection pass at a time (same-timestamp cascades).
#[allow(clippy::too_many_arguments)]
fn resolve_instant_events(
    engine: &mut Engine,
    state: &mut SystemState,
    fields: &mut Fields,
    accel: &mut Fields,
    outcome: &mut SimOutcome,
    ufls_just_fired: &mut [f64],
    stop: &mut bool,
) -> Result<()> {
    if !engine.cfg.relays_armed {
        return Ok(());
    }
    loop {
        if *stop {
            return Ok(());
        }
        let m_psi = engine.system_inertia(&state.psi);
        if m_psi <= 0.0 {
            outcome.collapsed = true;
            return Ok(());
        }
        let t = state.time;
        let p_hat = engine.realized_loads(t);
        let net = engine.net_loads(&p_hat, &state.ufls_count_f, &state.uvls_flag_v);
        engine.deriv(fields, &net, &state.psi, m_psi, accel);
        let flows = engine.flows(fields, &state.omega_line);
        let p_gen = engine.generation(&fields.rho, &state.psi);
        let rocof: Vec<f64> = accel.w.iter().copied().collect();
        let mut probe = state.clone();
        fields.write_to(&mut probe);
        let candidates = inspect(&probe, &rocof, &flows, &p_hat, &p_gen, engine.network, engine.er);
        let first = candidates
            .into_iter()
            .find(|c| !(c.kind == EventKind::Ufls && ufls_just_fired[c.target] == t));
        match first {
            None => return Ok(()),
            Some(c) => {
                apply_event(
                    engine,
                    state,
                    fields,
                    accel,
                    PendingEvent { time: t, kind: c.kind, target: c.target },
                    outcome,
                    ufls_just_fired,
                    stop,
                )?;
            }
        }
    }
}
