//! Rare-event samplers over the attack-vector space.
//!
//! A state is the quadruple (eta, nu, tau, I): per-node scaling schedule,
//! vulnerability share, demand scenario and change interval. The target is
//!
//! ```text
//! pi(x)  proportional to  rho(Sigma(x)) * 1{the attack triggers a relay}
//! ```
//!
//! with rho the severity density over per-node disruption totals. Success of
//! a state costs one full hybrid simulation, which makes the indicator the
//! expensive part; the skipping proposal spends up to `max_skips` extra
//! simulations pushing a failed proposal along a fixed random direction
//! before giving up, which is what lets chains cross the wide dead zones
//! between disconnected success islands.
//!
//! Chains are deterministic given (seed, chain index): each chain owns one
//! counter-mode RNG stream and never shares state with its siblings.

pub mod density;
pub mod toy;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attack::{build_schedule, realized_changes, AttackSpec, ETA_MAX, ETA_MIN, INTERVAL_MIN, T_MAX};
use crate::dynamics::{integrate_with_events, IntegratorConfig, SystemState};
use crate::error::Result;
use crate::grid::{apply_scenario, find_equilibrium, Network, Scenario};
use crate::protection::ERConfig;
use crate::store::{AcceptedRecord, AcceptedStats, ChangePair, ProposalRecord};
use density::log_sigma_density;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mc,
    Rwm,
    Skipping,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mc => "mc",
            Algorithm::Rwm => "rwm",
            Algorithm::Skipping => "skipping",
        }
    }
}

/// Static attacks hold one column for the whole horizon; dynamic attacks
/// redraw the change interval and use as many columns as fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Static,
    Dynamic,
}

impl AttackMode {
    pub fn name(self) -> &'static str {
        match self {
            AttackMode::Static => "static",
            AttackMode::Dynamic => "dynamic",
        }
    }
}

/// Whether (nu, tau, I) are redrawn with every proposal or pinned per chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleResampling {
    PerProposal,
    PerChain,
}

/// Law of the positive skip distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum SkipDistanceLaw {
    Exponential { scale: f64 },
    LogUniform { lo: f64, hi: f64 },
}

impl SkipDistanceLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            SkipDistanceLaw::Exponential { scale } => {
                let u: f64 = rng.gen::<f64>();
                -scale * (1.0 - u).ln()
            }
            SkipDistanceLaw::LogUniform { lo, hi } => {
                let u: f64 = rng.gen::<f64>();
                (lo.ln() + u * (hi.ln() - lo.ln())).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub mode: AttackMode,
    /// Proposals per chain.
    pub proposals: usize,
    pub chains: usize,
    pub seed: u64,
    /// Fixed demand scenario; None draws one per triple.
    pub scenario: Option<Scenario>,
    /// Extra indicator evaluations a skipping proposal may spend.
    pub max_skips: usize,
    pub skip_distance: SkipDistanceLaw,
    /// Random-walk step per eta entry.
    pub rwm_scale: f64,
    pub triple_resampling: TripleResampling,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            algorithm: Algorithm::Skipping,
            mode: AttackMode::Dynamic,
            proposals: 1000,
            chains: 1,
            seed: 0,
            scenario: None,
            max_skips: 4,
            skip_distance: SkipDistanceLaw::Exponential { scale: 2.0 },
            rwm_scale: 0.5,
            triple_resampling: TripleResampling::PerProposal,
        }
    }
}

/// One point of the state space, with eta already cut to the columns the
/// interval admits.
#[derive(Clone, Debug)]
pub struct GridPoint {
    pub eta: DMatrix<f64>,
    pub nu: f64,
    pub tau: Scenario,
    pub interval: f64,
}

#[derive(Clone, Debug)]
pub struct GridEval {
    pub success: bool,
    /// -inf when the attack failed (indicator zero).
    pub log_density: f64,
    pub sigma: DVector<f64>,
    pub stats: Option<AcceptedStats>,
}

/// Wraps the simulator as a success oracle with per-scenario equilibrium
/// caching and an evaluation counter.
pub struct GridOracle<'a> {
    network: &'a Network,
    er: &'a ERConfig,
    integ: IntegratorConfig,
    p_tl_surface: DVector<f64>,
    rest_cache: [Option<(SystemState, DVector<f64>)>; 4],
    pub calls: u64,
}

impl<'a> GridOracle<'a> {
    pub fn new(network: &'a Network, er: &'a ERConfig, integ: &IntegratorConfig) -> GridOracle<'a> {
        let mut integ = integ.clone();
        integ.relays_armed = true;
        integ.stop_at_first_event = true;
        integ.trajectory_decimation = 0;
        let arrays = network.node_arrays();
        let surface = network.attack_surface();
        let p_tl_surface =
            DVector::from_iterator(surface.len(), surface.iter().map(|&i| arrays.p_total_tl[i]));
        GridOracle { network, er, integ, p_tl_surface, rest_cache: [None, None, None, None], calls: 0 }
    }

    fn rest_and_loads(&mut self, tau: Scenario) -> Result<(SystemState, DVector<f64>)> {
        let slot = tau.index() - 1;
        if self.rest_cache[slot].is_none() {
            let rest = find_equilibrium(self.network, tau)?;
            let loads = apply_scenario(self.network, tau);
            let surface = self.network.attack_surface();
            let p_eq_surface =
                DVector::from_iterator(surface.len(), surface.iter().map(|&i| loads[i]));
            self.rest_cache[slot] = Some((rest, p_eq_surface));
        }
        let (rest, p_eq) = self.rest_cache[slot].as_ref().unwrap();
        Ok((rest.clone(), p_eq.clone()))
    }

    /// Full evaluation: severity arithmetic plus one first-event simulation.
    pub fn evaluate(&mut self, point: &GridPoint) -> Result<GridEval> {
        self.calls += 1;
        let spec =
            AttackSpec::new(point.eta.clone(), point.nu, point.tau, point.interval, T_MAX)?;
        spec.validate_for(self.network)?;
        let (rest, p_eq_surface) = self.rest_and_loads(point.tau)?;
        let realized = realized_changes(&spec, &p_eq_surface, &self.p_tl_surface);
        let sim = integrate_with_events(&rest, &spec, self.er, self.network, &self.integ)?;
        let success = !sim.events.is_empty();
        if !success {
            return Ok(GridEval {
                success: false,
                log_density: f64::NEG_INFINITY,
                sigma: realized.sigma,
                stats: None,
            });
        }
        let first = sim.events[0];
        let r = first.time;
        let (mu_lambda_minus, mu_lambda_minus_empty) =
            crate::analysis::mu_lambda_minus(&realized.lambda, &spec.attack_times, r);
        let cascade = crate::analysis::cascade_size(&sim.events);
        let net_changes = realized.net_changes();
        let changes: Vec<ChangePair> = sim
            .sys_freq_at_changes
            .iter()
            .zip(net_changes.iter())
            .map(|(s, &nc)| ChangePair { time: s.time, sys_freq: s.sys_freq, net_change: nc })
            .collect();
        let log_density = log_sigma_density(&realized.sigma);
        let stats = AcceptedStats {
            sigma: realized.sigma.iter().copied().collect(),
            sigma_total: realized.sigma.sum(),
            nu: point.nu,
            tau: point.tau,
            interval: point.interval,
            response_time: r,
            first_event_kind: first.kind,
            first_event_target: first.target,
            mu_lambda_minus,
            mu_lambda_minus_empty,
            avg_mu_lambda: realized.mean_abs_change(),
            cascade,
            truncated: sim.truncated,
            changes,
        };
        Ok(GridEval { success: true, log_density, sigma: realized.sigma, stats: Some(stats) })
    }
}

/// Metropolis decision for the success-gated target, in log space.
/// `current` is None before the first acceptance; a proposal with zero
/// density is never taken, and any positive-density proposal beats a
/// zero-density current state outright.
pub fn accept_reject(current_log_density: Option<f64>, proposal_log_density: f64, u: f64) -> bool {
    if proposal_log_density == f64::NEG_INFINITY {
        return false;
    }
    match current_log_density {
        None => true,
        Some(lc) if lc == f64::NEG_INFINITY => true,
        Some(lc) => {
            let log_alpha = (proposal_log_density - lc).min(0.0);
            u.ln() <= log_alpha
        }
    }
}

struct CurrentState {
    /// Full eta bank (surface x maximum column count); the active prefix is
    /// cut per proposal.
    master: DMatrix<f64>,
    log_density: f64,
    proposal_idx: usize,
}

pub struct ChainOutput {
    pub proposals: Vec<ProposalRecord>,
    pub accepted: Vec<AcceptedRecord>,
    pub oracle_calls: u64,
    pub truncated_states: u64,
}

fn max_columns() -> usize {
    (T_MAX / INTERVAL_MIN).floor() as usize
}

fn draw_master<R: Rng>(rng: &mut R, l: usize) -> DMatrix<f64> {
    DMatrix::from_fn(l, max_columns(), |_, _| rng.gen_range(ETA_MIN..ETA_MAX))
}

fn draw_triple<R: Rng>(rng: &mut R, cfg: &SamplerConfig) -> (f64, Scenario, f64) {
    let nu: f64 = rng.gen::<f64>();
    let tau = match cfg.scenario {
        Some(tau) => tau,
        None => Scenario::from_index(rng.gen_range(1..=4)).expect("index in 1..=4"),
    };
    let interval = match cfg.mode {
        AttackMode::Static => T_MAX,
        AttackMode::Dynamic => rng.gen_range(INTERVAL_MIN..T_MAX),
    };
    (nu, tau, interval)
}

fn cut_point(master: &DMatrix<f64>, nu: f64, tau: Scenario, interval: f64) -> GridPoint {
    let (n, _) = build_schedule(interval, T_MAX).expect("interval validated by draw");
    GridPoint { eta: master.columns(0, n).into_owned(), nu, tau, interval }
}

/// Runs one chain of the configured algorithm and returns its records.
pub fn run_chain(
    network: &Network,
    er: &ERConfig,
    integ: &IntegratorConfig,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);
    let mut oracle = GridOracle::new(network, er, integ);
    let l = network.attack_surface().len();

    // RWM always pins the triple for the whole chain (the walk needs a fixed
    // column count); skipping pins it only when configured to.
    let chain_triple = match cfg.algorithm {
        Algorithm::Rwm => Some(draw_triple(&mut rng, cfg)),
        Algorithm::Skipping if cfg.triple_resampling == TripleResampling::PerChain => {
            Some(draw_triple(&mut rng, cfg))
        }
        _ => None,
    };

    let mut current: Option<CurrentState> = None;
    let mut out = ChainOutput {
        proposals: Vec::with_capacity(cfg.proposals),
        accepted: Vec::new(),
        oracle_calls: 0,
        truncated_states: 0,
    };

    for p in 0..cfg.proposals {
        let mut evals;
        let mut accepted_new = false;

        match cfg.algorithm {
            Algorithm::Mc => {
                let master = draw_master(&mut rng, l);
                let (nu, tau, interval) = draw_triple(&mut rng, cfg);
                let point = cut_point(&master, nu, tau, interval);
                let eval = oracle.evaluate(&point)?;
                evals = 1;
                if eval.success {
                    record_acceptance(&mut out, chain, p, &point, &eval);
                    accepted_new = true;
                    current =
                        Some(CurrentState { master, log_density: eval.log_density, proposal_idx: p });
                } else {
                    // Independent draws: a miss leaves no state behind.
                    current = None;
                }
            }
            Algorithm::Rwm => {
                let (nu, tau, interval) = chain_triple.expect("set for RWM");
                match &current {
                    None => {
                        let master = draw_master(&mut rng, l);
                        let point = cut_point(&master, nu, tau, interval);
                        let eval = oracle.evaluate(&point)?;
                        evals = 1;
                        if eval.success {
                            record_acceptance(&mut out, chain, p, &point, &eval);
                            accepted_new = true;
                            current = Some(CurrentState {
                                master,
                                log_density: eval.log_density,
                                proposal_idx: p,
                            });
                        }
                    }
                    Some(cur) => {
                        let (n, _) = build_schedule(interval, T_MAX).expect("valid interval");
                        let mut master = cur.master.clone();
                        for j in 0..n {
                            for i in 0..l {
                                let step: f64 = StandardNormal.sample(&mut rng);
                                master[(i, j)] += cfg.rwm_scale * step;
                            }
                        }
                        let point = cut_point(&master, nu, tau, interval);
                        let eval = oracle.evaluate(&point)?;
                        evals = 1;
                        let u: f64 = rng.gen::<f64>();
                        if accept_reject(Some(cur.log_density), eval.log_density, u) {
                            record_acceptance(&mut out, chain, p, &point, &eval);
                            accepted_new = true;
                            current = Some(CurrentState {
                                master,
                                log_density: eval.log_density,
                                proposal_idx: p,
                            });
                        }
                    }
                }
            }
            Algorithm::Skipping => {
                let (nu, tau, interval) = match chain_triple {
                    Some(t) => t,
                    None => draw_triple(&mut rng, cfg),
                };
                let (n, _) = build_schedule(interval, T_MAX).expect("valid interval");
                // Fresh start, then push along a fixed per-column direction
                // until the indicator lights up or patience runs out.
                let mut master = draw_master(&mut rng, l);
                let phi: DMatrix<f64> =
                    DMatrix::from_fn(l, n, |_, _| StandardNormal.sample(&mut rng));
                let mut point = cut_point(&master, nu, tau, interval);
                let mut eval = oracle.evaluate(&point)?;
                evals = 1;
                let mut skips = 0usize;
                while !eval.success && skips < cfg.max_skips {
                    for j in 0..n {
                        let r = cfg.skip_distance.sample(&mut rng);
                        for i in 0..l {
                            master[(i, j)] += r * phi[(i, j)];
                        }
                    }
                    point = cut_point(&master, nu, tau, interval);
                    eval = oracle.evaluate(&point)?;
                    evals += 1;
                    skips += 1;
                }
                if eval.success {
                    let u: f64 = rng.gen::<f64>();
                    let lc = current.as_ref().map(|c| c.log_density);
                    if accept_reject(lc, eval.log_density, u) {
                        record_acceptance(&mut out, chain, p, &point, &eval);
                        accepted_new = true;
                        current = Some(CurrentState {
                            master,
                            log_density: eval.log_density,
                            proposal_idx: p,
                        });
                    }
                }
            }
        }

        let state_idx = current.as_ref().map(|c| c.proposal_idx as i64).unwrap_or(-1);
        out.proposals.push(ProposalRecord { chain, proposal: p, evals, accepted_new, state_idx });
    }

    out.oracle_calls = oracle.calls;
    Ok(out)
}

fn record_acceptance(
    out: &mut ChainOutput,
    chain: usize,
    proposal: usize,
    point: &GridPoint,
    eval: &GridEval,
) {
    let stats = eval.stats.clone().expect("stats exist on success");
    if stats.truncated {
        out.truncated_states += 1;
    }
    let eta_rows: Vec<Vec<f64>> =
        (0..point.eta.nrows()).map(|i| point.eta.row(i).iter().copied().collect()).collect();
    out.accepted.push(AcceptedRecord {
        chain,
        proposal,
        eta: eta_rows,
        log_density: eval.log_density,
        stats,
    });
}
