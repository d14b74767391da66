//! Emergency-response relays and their N-1 calibration.
//!
//! Five irreversible relay families act on the running system:
//!
//! * RIGS: a generator whose |w'| exceeds the RoCoF threshold is shed.
//! * OFGS: a generator whose w exceeds the over-frequency threshold is shed.
//! * UFLS: a load node whose w falls below the active rung of a four-rung
//!   ladder sheds 10% of its realized load, at most one rung per inspection.
//! * UVLS: a load node held below 0.9 p.u. voltage for 5 s sheds 5%, once.
//! * Line: an interconnector whose |flow| exceeds the flow threshold opens.
//!
//! Frequency relays live on pure load nodes only; load colocated at a
//! generator bus is attackable but not shed. Cumulative shedding enters the
//! dynamics through the factor iota = 1 - 0.1 F - 0.05 V.
//!
//! Calibration runs every single-component outage against every demand
//! scenario with relays disarmed, records the excursion peaks, and sets each
//! threshold 5% above its worst excursion, then verifies the result is quiet.

use serde::{Deserialize, Serialize};

use crate::attack::AttackSpec;
use crate::dynamics::{integrate_with_events, Contingency, IntegratorConfig, PeakStats, SystemState};
use crate::error::{CoreError, Result};
use crate::grid::{apply_scenario, find_equilibrium, Network, Scenario};

pub const UFLS_STAGES: usize = 4;

/// Relay families, in tie-break priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    Rigs,
    Ofgs,
    Ufls,
    Uvls,
    Line,
}

impl EventKind {
    pub const ALL: [EventKind; 5] =
        [EventKind::Rigs, EventKind::Ofgs, EventKind::Ufls, EventKind::Uvls, EventKind::Line];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Rigs => "RIGS",
            EventKind::Ofgs => "OFGS",
            EventKind::Ufls => "UFLS",
            EventKind::Uvls => "UVLS",
            EventKind::Line => "LINE",
        }
    }
}

/// One relay activation. `target` indexes generators for RIGS/OFGS, nodes for
/// UFLS/UVLS and interconnectors for line trips. `magnitude` is the power
/// involved: generation lost, load shed, or pre-trip line flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EREvent {
    pub time: f64,
    pub kind: EventKind,
    pub target: usize,
    pub magnitude: f64,
}

/// Relay settings. The UFLS ladder is strictly decreasing; thresholds are
/// rad/s deviations from nominal, so the default ladder is the usual
/// 59.5/59/58.5/58 Hz staircase on a 60 Hz base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ERConfig {
    pub rocof_threshold: f64,
    pub overfreq_threshold: f64,
    pub ufls_thresholds_fu: [f64; UFLS_STAGES],
    pub ufls_fraction: f64,
    pub uvls_voltage: f64,
    pub uvls_hold: f64,
    pub uvls_fraction: f64,
    pub line_threshold_pphi: f64,
}

pub fn default_ufls_ladder() -> [f64; UFLS_STAGES] {
    [
        -std::f64::consts::PI,
        -2.0 * std::f64::consts::PI,
        -3.0 * std::f64::consts::PI,
        -4.0 * std::f64::consts::PI,
    ]
}

impl ERConfig {
    /// Uncalibrated starting point; deliberately tight so the calibration
    /// sweep nearly always replaces the frequency thresholds.
    pub fn base(network: &Network) -> ERConfig {
        ERConfig {
            rocof_threshold: 1.0,
            overfreq_threshold: 0.15,
            ufls_thresholds_fu: default_ufls_ladder(),
            ufls_fraction: 0.10,
            uvls_voltage: 0.9,
            uvls_hold: 5.0,
            uvls_fraction: 0.05,
            line_threshold_pphi: network.line_threshold_pphi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.ufls_thresholds_fu.windows(2) {
            if w[1] >= w[0] {
                return Err(CoreError::InvalidInput(format!(
                    "UFLS ladder must be strictly decreasing, got {:?}",
                    self.ufls_thresholds_fu
                )));
            }
        }
        if self.ufls_thresholds_fu[0] >= 0.0 {
            return Err(CoreError::InvalidInput("UFLS ladder must be negative".into()));
        }
        for (label, v) in [
            ("rocof_threshold", self.rocof_threshold),
            ("overfreq_threshold", self.overfreq_threshold),
            ("uvls_hold", self.uvls_hold),
            ("line_threshold_pphi", self.line_threshold_pphi),
        ] {
            if !(v > 0.0) {
                return Err(CoreError::InvalidInput(format!("{label} must be positive, got {v}")));
            }
        }
        for (label, v) in [("ufls_fraction", self.ufls_fraction), ("uvls_fraction", self.uvls_fraction)]
        {
            if !(0.0..=1.0).contains(&v) || !(v > 0.0) {
                return Err(CoreError::InvalidInput(format!("{label} must be in (0, 1], got {v}")));
            }
        }
        if !(0.0 < self.uvls_voltage && self.uvls_voltage < 1.0) {
            return Err(CoreError::InvalidInput(format!(
                "uvls_voltage must be in (0, 1), got {}",
                self.uvls_voltage
            )));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<ERConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::InvalidInput(format!("{}: {e}", path.display())))?;
        let cfg: ERConfig = serde_json::from_str(&text)
            .map_err(|e| CoreError::Schema(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Cumulative shedding factor for a node with F UFLS stages consumed and
/// UVLS flag V.
pub fn effective_load_factor(ufls_stages: u8, uvls_fired: bool) -> f64 {
    1.0 - 0.1 * f64::from(ufls_stages) - 0.05 * f64::from(u8::from(uvls_fired))
}

/// Pure relay scan: returns every condition violated by the given snapshot,
/// sorted by (kind, target). The integrator bisects activation times and
/// applies at most one event per pass; callers must not assume the whole
/// list fires.
pub fn inspect(
    state: &SystemState,
    rocof: &[f64],
    flows: &[f64],
    p_hat: &nalgebra::DVector<f64>,
    p_gen: &nalgebra::DVector<f64>,
    network: &Network,
    cfg: &ERConfig,
) -> Vec<EREvent> {
    let mut out = Vec::new();
    let t = state.time;
    for g in 0..network.n_gen {
        if !state.psi[g] {
            continue;
        }
        if rocof[g].abs() > cfg.rocof_threshold {
            out.push(EREvent { time: t, kind: EventKind::Rigs, target: g, magnitude: p_gen[g] });
        }
        if state.delta_dot[g] > cfg.overfreq_threshold {
            out.push(EREvent { time: t, kind: EventKind::Ofgs, target: g, magnitude: p_gen[g] });
        }
    }
    for i in network.relay_nodes() {
        let stage = state.ufls_count_f[i] as usize;
        if stage < UFLS_STAGES && state.delta_dot[i] < cfg.ufls_thresholds_fu[stage] {
            out.push(EREvent {
                time: t,
                kind: EventKind::Ufls,
                target: i,
                magnitude: cfg.ufls_fraction * p_hat[i],
            });
        }
        if !state.uvls_flag_v[i] && state.uvls_timer[i] >= cfg.uvls_hold {
            out.push(EREvent {
                time: t,
                kind: EventKind::Uvls,
                target: i,
                magnitude: cfg.uvls_fraction * p_hat[i],
            });
        }
    }
    for (k, &flow) in flows.iter().enumerate() {
        if state.omega_line[k] && flow.abs() > cfg.line_threshold_pphi {
            out.push(EREvent { time: t, kind: EventKind::Line, target: k, magnitude: flow.abs() });
        }
    }
    out.sort_by(|a, b| (a.kind, a.target).partial_cmp(&(b.kind, b.target)).unwrap());
    out
}

/// Margin applied above the worst N-1 excursion.
pub const CALIBRATION_MARGIN: f64 = 1.05;
/// Floors keeping thresholds physical when a sweep barely moves.
pub const ROCOF_FLOOR: f64 = 0.05;
pub const OVERFREQ_FLOOR: f64 = 0.15;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationCase {
    pub contingency: String,
    pub scenario: Scenario,
    pub events: usize,
    pub first_event: Option<EREvent>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub network: String,
    pub base_config_secure: bool,
    pub peaks: PeakStats,
    pub cases: Vec<CalibrationCase>,
    pub all_pass: bool,
    pub config: ERConfig,
}

fn contingency_list(network: &Network) -> Vec<Contingency> {
    let mut list: Vec<Contingency> = (0..network.n_gen)
        .filter(|&g| !network.generators[g].n1_exempt)
        .map(Contingency::GeneratorOutage)
        .collect();
    list.extend((0..network.interconnectors.len()).map(Contingency::InterconnectorOutage));
    list
}

fn capacity_precheck(network: &Network) -> Result<()> {
    let peak_load: f64 = Scenario::ALL
        .iter()
        .map(|&tau| apply_scenario(network, tau).sum())
        .fold(0.0, f64::max);
    for g in 0..network.n_gen {
        if network.generators[g].n1_exempt {
            continue;
        }
        let remaining: f64 = (0..network.n_gen)
            .filter(|&i| i != g)
            .map(|i| network.generators[i].p_max)
            .sum();
        if remaining < peak_load {
            return Err(CoreError::CapacityExceeded { load: peak_load, capacity: remaining });
        }
    }
    Ok(())
}

/// Runs every contingency x scenario with the given relay settings and
/// reports which stayed quiet.
pub fn verify_n1(
    network: &Network,
    cfg: &ERConfig,
    integ: &IntegratorConfig,
) -> Result<(Vec<CalibrationCase>, PeakStats)> {
    let mut cases = Vec::new();
    let mut peaks = PeakStats::default();
    peaks.min_load_voltage = f64::INFINITY;
    let contingencies = contingency_list(network);
    for &tau in &Scenario::ALL {
        let rest = find_equilibrium(network, tau)?;
        let spec = AttackSpec::zero(network, tau);
        for &c in &contingencies {
            let mut initial = rest.clone();
            c.apply(&mut initial);
            let outcome = integrate_with_events(&initial, &spec, cfg, network, integ)?;
            peaks.fold(&outcome.peaks);
            cases.push(CalibrationCase {
                contingency: c.label(network),
                scenario: tau,
                events: outcome.events.len(),
                first_event: outcome.events.first().copied(),
                pass: outcome.events.is_empty() && !outcome.collapsed,
            });
        }
    }
    Ok((cases, peaks))
}

/// N-1 calibration: returns relay settings under which every single outage in
/// every scenario rides through without any relay action, plus the evidence.
///
/// An already-secure starting config is returned unchanged. The UVLS voltage,
/// hold and fraction are fixed constants; if an outage keeps a load below the
/// UVLS voltage for the full hold time the network cannot be secured here and
/// calibration fails.
pub fn calibrate_n1(
    network: &Network,
    base: &ERConfig,
    integ: &IntegratorConfig,
) -> Result<(ERConfig, CalibrationReport)> {
    base.validate()?;
    capacity_precheck(network)?;

    let mut armed = integ.clone();
    armed.relays_armed = true;
    armed.stop_at_first_event = false;

    let (base_cases, _) = verify_n1(network, base, &armed)?;
    if base_cases.iter().all(|c| c.pass) {
        let mut disarmed = integ.clone();
        disarmed.relays_armed = false;
        let (_, peaks) = verify_n1(network, base, &disarmed)?;
        let report = CalibrationReport {
            network: network.name.clone(),
            base_config_secure: true,
            peaks,
            cases: base_cases,
            all_pass: true,
            config: base.clone(),
        };
        return Ok((base.clone(), report));
    }

    let mut disarmed = integ.clone();
    disarmed.relays_armed = false;
    let (_, peaks) = verify_n1(network, base, &disarmed)?;

    if peaks.max_uvls_window >= base.uvls_hold {
        return Err(CoreError::CalibrationFailure {
            violations: base_cases.iter().filter(|c| !c.pass).count(),
        });
    }

    let mut cfg = base.clone();
    cfg.rocof_threshold = (peaks.max_gen_rocof * CALIBRATION_MARGIN).max(ROCOF_FLOOR);
    cfg.overfreq_threshold = (peaks.gen_zenith * CALIBRATION_MARGIN).max(OVERFREQ_FLOOR);
    cfg.line_threshold_pphi = (peaks.max_tie_flow * CALIBRATION_MARGIN).max(1e-3);
    let deepest = peaks.load_nadir * CALIBRATION_MARGIN;
    if deepest < cfg.ufls_thresholds_fu[0] {
        // Deepen the whole ladder by one factor so the first rung clears the
        // worst nadir; spacing ratios are preserved.
        let scale = deepest / cfg.ufls_thresholds_fu[0];
        for rung in &mut cfg.ufls_thresholds_fu {
            *rung *= scale;
        }
    }
    cfg.validate()?;

    let (cases, _) = verify_n1(network, &cfg, &armed)?;
    let failures = cases.iter().filter(|c| !c.pass).count();
    if failures > 0 {
        return Err(CoreError::CalibrationFailure { violations: failures });
    }
    let report = CalibrationReport {
        network: network.name.clone(),
        base_config_secure: false,
        peaks,
        cases,
        all_pass: true,
        config: cfg.clone(),
    };
    Ok((cfg, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid;

    #[test]
    fn shedding_factor_spot_values() {
        assert_eq!(effective_load_factor(0, false), 1.0);
        assert!((effective_load_factor(2, false) - 0.8).abs() < 1e-15);
        assert!((effective_load_factor(4, true) - 0.55).abs() < 1e-15);
        assert!((effective_load_factor(0, true) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn kind_order_is_tiebreak_priority() {
        let mut kinds = EventKind::ALL;
        kinds.sort();
        assert_eq!(kinds, EventKind::ALL);
        assert!(EventKind::Rigs < EventKind::Ofgs);
        assert!(EventKind::Uvls < EventKind::Line);
    }

    #[test]
    fn ladder_must_strictly_decrease() {
        let net = grid::ktas();
        let mut cfg = ERConfig::base(&net);
        cfg.validate().unwrap();
        cfg.ufls_thresholds_fu = [-1.0, -1.0, -2.0, -3.0];
        assert!(cfg.validate().is_err());
        cfg.ufls_thresholds_fu = [-1.0, -0.5, -2.0, -3.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_ladder_matches_half_hertz_staircase() {
        let fu = default_ufls_ladder();
        for (k, rung) in fu.iter().enumerate() {
            let hz = rung / (2.0 * std::f64::consts::PI);
            assert!((hz - (-(0.5 + 0.5 * k as f64))).abs() < 1e-12);
        }
    }

    #[test]
    fn config_roundtrip() {
        let net = grid::ktas();
        let cfg = ERConfig::base(&net);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("er.json");
        cfg.save(&path).unwrap();
        assert_eq!(ERConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn inspect_orders_by_kind_then_target() {
        let net = grid::ktas();
        let rest = find_equilibrium(&net, Scenario::Morning).unwrap();
        let mut state = rest.clone();
        // Force several simultaneous violations.
        state.delta_dot[4] = -4.0; // UFLS on node 4
        state.delta_dot[5] = -4.0; // UFLS on node 5
        state.delta_dot[1] = 0.5; // OFGS on gen 1
        state.uvls_timer[4] = 10.0; // UVLS on node 4
        let cfg = ERConfig {
            rocof_threshold: 1e9,
            overfreq_threshold: 0.2,
            ..ERConfig::base(&net)
        };
        let p_hat = apply_scenario(&net, Scenario::Morning);
        let p_gen = nalgebra::DVector::zeros(net.n_gen);
        let rocof = vec![0.0; net.n_total()];
        let flows = vec![0.0; net.interconnectors.len()];
        let got = inspect(&state, &rocof, &flows, &p_hat, &p_gen, &net, &cfg);
        let kinds: Vec<(EventKind, usize)> = got.iter().map(|e| (e.kind, e.target)).collect();
        assert_eq!(
            kinds,
            vec![
                (EventKind::Ofgs, 1),
                (EventKind::Ufls, 4),
                (EventKind::Ufls, 5),
                (EventKind::Uvls, 4),
            ]
        );
    }

    #[test]
    fn relay_scan_skips_generator_nodes_for_load_relays() {
        let net = grid::ieee39();
        let rest = find_equilibrium(&net, Scenario::Night).unwrap();
        let mut state = rest.clone();
        // Colocated load at a generator node: deep frequency dip there must
        // not produce a UFLS candidate.
        state.delta_dot[1] = -5.0;
        let cfg = ERConfig {
            overfreq_threshold: 1e9,
            rocof_threshold: 1e9,
            ..ERConfig::base(&net)
        };
        let p_hat = apply_scenario(&net, Scenario::Night);
        let p_gen = nalgebra::DVector::zeros(net.n_gen);
        let rocof = vec![0.0; net.n_total()];
        let flows = vec![0.0; net.interconnectors.len()];
        let got = inspect(&state, &rocof, &flows, &p_hat, &p_gen, &net, &cfg);
        assert!(got.is_empty());
    }

    #[test]
    fn small_network_calibration_secures_every_outage() {
        let net = grid::ktas();
        let integ = IntegratorConfig::default_for(&net);
        let base = ERConfig::base(&net);
        let (cfg, report) = calibrate_n1(&net, &base, &integ).unwrap();
        assert!(report.all_pass);
        assert!(!report.base_config_secure);
        // 4 generators + 1 interconnector, all four demand scenarios.
        assert_eq!(report.cases.len(), 20);
        assert!(report.cases.iter().all(|c| c.pass && c.events == 0));
        // Thresholds sit 5% above the worst ride-through excursion, measured
        // on the signals the relays actually monitor (surviving machines).
        assert!((cfg.rocof_threshold - 6.95).abs() < 0.5, "{}", cfg.rocof_threshold);
        assert!((cfg.overfreq_threshold - 1.79).abs() < 0.1, "{}", cfg.overfreq_threshold);
        assert!((cfg.line_threshold_pphi - 1.39).abs() < 0.1, "{}", cfg.line_threshold_pphi);
        // The default ladder already clears the worst nadir here.
        assert_eq!(cfg.ufls_thresholds_fu, default_ufls_ladder());
        // UVLS constants are never touched by calibration.
        assert_eq!(cfg.uvls_voltage, base.uvls_voltage);
        assert_eq!(cfg.uvls_hold, base.uvls_hold);
        assert_eq!(cfg.uvls_fraction, base.uvls_fraction);

        // An already-secure config comes back unchanged.
        let (again, report2) = calibrate_n1(&net, &cfg, &integ).unwrap();
        assert_eq!(again, cfg);
        assert!(report2.base_config_secure);
    }

    #[test]
    fn capacity_precheck_flags_undersized_fleet() {
        let mut net = grid::ktas();
        for g in &mut net.generators {
            g.p_max = 0.72;
        }
        assert!(matches!(
            capacity_precheck(&net),
            Err(CoreError::CapacityExceeded { .. })
        ));
        assert!(capacity_precheck(&grid::ktas()).is_ok());
    }
}
