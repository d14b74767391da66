//! Single entry point for the grid attack toolkit: export built-in networks,
//! calibrate relay settings, replay attack specs, drive the samplers, and
//! post-process the resulting stores.

mod report;
mod run;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use laagrid_core::analysis;
use laagrid_core::attack::realized_changes;
use laagrid_core::dynamics::{Method, PeakStats};
use laagrid_core::sampler::{Algorithm, AttackMode, SamplerConfig, SkipDistanceLaw, TripleResampling};
use laagrid_core::store::{CascadeTotals, ChangePair};
use laagrid_core::{
    apply_scenario, calibrate_n1, find_equilibrium, ieee39, integrate_with_events, ktas,
    AttackSpec, CoreError, ERConfig, EREvent, IntegratorConfig, Network, Result, Scenario,
};
use nalgebra::DVector;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "laagrid", version, about = "Load-altering attack studies on reduced grid models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetworkName {
    Ktas,
    Ieee39,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Mc,
    Rwm,
    Skipping,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Algorithm {
        match a {
            AlgorithmArg::Mc => Algorithm::Mc,
            AlgorithmArg::Rwm => Algorithm::Rwm,
            AlgorithmArg::Skipping => Algorithm::Skipping,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    Dynamic,
}

impl From<ModeArg> for AttackMode {
    fn from(m: ModeArg) -> AttackMode {
        match m {
            ModeArg::Static => AttackMode::Static,
            ModeArg::Dynamic => AttackMode::Dynamic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Night,
    Morning,
    Afternoon,
    Evening,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Scenario {
        match s {
            ScenarioArg::Night => Scenario::Night,
            ScenarioArg::Morning => Scenario::Morning,
            ScenarioArg::Afternoon => Scenario::Afternoon,
            ScenarioArg::Evening => Scenario::Evening,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4,
    Rk45,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in network model to JSON.
    ExportNetwork {
        #[arg(long, value_enum)]
        name: NetworkName,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep all single outages and tighten relay thresholds until every one
    /// rides through without tripping.
    Calibrate {
        #[arg(long)]
        network: PathBuf,
        /// Where to write the calibrated relay config.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-contingency report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Integrator step override in seconds.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Replay one attack spec: trajectory CSV, event log, and run statistics.
    Simulate {
        #[arg(long)]
        network: PathBuf,
        /// Attack spec JSON (eta rows, nu, tau, interval).
        #[arg(long)]
        attack: PathBuf,
        /// Calibrated relay config.
        #[arg(long)]
        er_config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Record every Nth integration step in the trajectory.
        #[arg(long, default_value_t = 10)]
        decimate: usize,
        /// Simulation horizon override in seconds.
        #[arg(long)]
        t_max: Option<f64>,
        /// Disarm the relays (pure dynamics replay).
        #[arg(long)]
        no_relays: bool,
        /// Stop at the first event instead of running the full cascade.
        #[arg(long)]
        stop_first: bool,
    },
    /// Run sampling chains against the simulator oracle and persist the
    /// store, diagnostics, and a reproducibility manifest.
    Sample {
        #[arg(long)]
        network: PathBuf,
        /// Calibrated relay config; required unless --calibrate is set.
        #[arg(long)]
        er_config: Option<PathBuf>,
        /// Calibrate in-process before sampling.
        #[arg(long)]
        calibrate: bool,
        #[arg(long, value_enum)]
        algorithm: AlgorithmArg,
        #[arg(long, value_enum, default_value = "dynamic")]
        mode: ModeArg,
        /// Proposals per chain.
        #[arg(long, default_value_t = 1000)]
        proposals: usize,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pin the demand scenario instead of drawing it per proposal.
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        /// Extra indicator evaluations a skipping proposal may spend.
        #[arg(long, default_value_t = 4)]
        max_skips: usize,
        /// Mean of the exponential skip-distance law.
        #[arg(long, default_value_t = 2.0)]
        skip_scale: f64,
        /// Random-walk step per eta entry.
        #[arg(long, default_value_t = 0.5)]
        rwm_scale: f64,
        /// Hold (nu, tau, interval) fixed per chain instead of redrawing
        /// them every proposal.
        #[arg(long)]
        per_chain_triple: bool,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarize a sample store: scenario tables, interval split, regression
    /// classification, and histograms.
    Analyze {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Fraction of each chain's accepted samples dropped as burn-in.
        #[arg(long, default_value_t = analysis::BURN_IN_FRACTION)]
        burn_in: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Tabulate several sample runs side by side.
    Compare {
        /// Run directories, each holding store.jsonl and diagnostics.json.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = analysis::BURN_IN_FRACTION)]
        burn_in: f64,
    },
    /// Re-execute a recorded run and verify the outputs byte for byte.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::ExportNetwork { name, out } => cmd_export_network(name, &out),
        Command::Calibrate { network, out, report, dt } => {
            cmd_calibrate(&network, &out, report.as_deref(), dt)
        }
        Command::Simulate {
            network,
            attack,
            er_config,
            out_dir,
            dt,
            method,
            decimate,
            t_max,
            no_relays,
            stop_first,
        } => cmd_simulate(SimulateArgs {
            network,
            attack,
            er_config,
            out_dir,
            dt,
            method,
            decimate,
            t_max,
            no_relays,
            stop_first,
        }),
        Command::Sample {
            network,
            er_config,
            calibrate,
            algorithm,
            mode,
            proposals,
            chains,
            seed,
            scenario,
            max_skips,
            skip_scale,
            rwm_scale,
            per_chain_triple,
            dt,
            out_dir,
        } => {
            let sampler = SamplerConfig {
                algorithm: algorithm.into(),
                mode: mode.into(),
                proposals,
                chains,
                seed,
                scenario: scenario.map(Into::into),
                max_skips,
                skip_distance: SkipDistanceLaw::Exponential { scale: skip_scale },
                rwm_scale,
                triple_resampling: if per_chain_triple {
                    TripleResampling::PerChain
                } else {
                    TripleResampling::PerProposal
                },
            };
            run::cmd_sample(&network, er_config.as_deref(), calibrate, sampler, dt, &out_dir)
        }
        Command::Analyze { store, out_dir, burn_in, bins } => {
            report::cmd_analyze(&store, &out_dir, burn_in, bins)
        }
        Command::Compare { runs, out, burn_in } => report::cmd_compare(&runs, &out, burn_in),
        Command::Rerun { manifest, out_dir } => run::cmd_rerun(&manifest, &out_dir),
    }
}

fn cmd_export_network(name: NetworkName, out: &Path) -> Result<()> {
    let network = match name {
        NetworkName::Ktas => ktas(),
        NetworkName::Ieee39 => ieee39(),
    };
    network.save(out)?;
    println!(
        "wrote {}: {} ({} generators, {} loads, {} interconnectors)",
        out.display(),
        network.name,
        network.n_gen,
        network.n_load,
        network.interconnectors.len()
    );
    Ok(())
}

fn cmd_calibrate(
    network_path: &Path,
    out: &Path,
    report_path: Option<&Path>,
    dt: Option<f64>,
) -> Result<()> {
    let network = Network::load(network_path)?;
    let mut integ = IntegratorConfig::default_for(&network);
    if let Some(dt) = dt {
        integ.step_dt = dt;
    }
    let base = ERConfig::base(&network);
    let (cfg, cal_report) = calibrate_n1(&network, &base, &integ)?;
    cfg.save(out)?;
    if let Some(rp) = report_path {
        std::fs::write(rp, serde_json::to_string_pretty(&cal_report)? + "\n")?;
    }
    println!(
        "calibrated {}: {} outage cases clean; rocof {:.4}, overfreq {:.4}, line {:.4}",
        network.name,
        cal_report.cases.len(),
        cfg.rocof_threshold,
        cfg.overfreq_threshold,
        cfg.line_threshold_pphi
    );
    Ok(())
}

/// Relay config loader that treats a missing file as "not calibrated yet"
/// rather than a generic I/O failure.
fn load_er(path: &Path) -> Result<ERConfig> {
    if !path.exists() {
        return Err(CoreError::MissingCalibration);
    }
    ERConfig::load(path)
}

struct SimulateArgs {
    network: PathBuf,
    attack: PathBuf,
    er_config: PathBuf,
    out_dir: PathBuf,
    dt: Option<f64>,
    method: Option<MethodArg>,
    decimate: usize,
    t_max: Option<f64>,
    no_relays: bool,
    stop_first: bool,
}

/// Statistics of one replayed attack. `response_time` is None when the run
/// produced no events at all, and the pre-event average is flagged empty in
/// that case.
#[derive(Serialize)]
struct SimStats {
    response_time: Option<f64>,
    first_event: Option<EREvent>,
    sigma: Vec<f64>,
    sigma_total: f64,
    avg_mu_lambda: f64,
    mu_lambda_minus: f64,
    mu_lambda_minus_empty: bool,
    cascade: CascadeTotals,
    peaks: PeakStats,
    truncated: bool,
    collapsed: bool,
    final_time: f64,
    changes: Vec<ChangePair>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let network = Network::load(&args.network)?;
    let spec = AttackSpec::load(&args.attack)?;
    spec.validate_for(&network)?;
    let er = load_er(&args.er_config)?;

    let mut integ = IntegratorConfig::default_for(&network);
    integ.trajectory_decimation = args.decimate;
    if let Some(dt) = args.dt {
        integ.step_dt = dt;
    }
    if let Some(m) = args.method {
        integ.method = match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Rk45 => Method::Rk45,
        };
    }
    if let Some(t) = args.t_max {
        integ.t_max = t;
    }
    integ.relays_armed = !args.no_relays;
    integ.stop_at_first_event = args.stop_first;

    let rest = find_equilibrium(&network, spec.tau)?;
    let loads = apply_scenario(&network, spec.tau);
    let arrays = network.node_arrays();
    let surface = network.attack_surface();
    let p_eq = DVector::from_iterator(surface.len(), surface.iter().map(|&i| loads[i]));
    let p_tl =
        DVector::from_iterator(surface.len(), surface.iter().map(|&i| arrays.p_total_tl[i]));
    let realized = realized_changes(&spec, &p_eq, &p_tl);

    let sim = integrate_with_events(&rest, &spec, &er, &network, &integ)?;

    std::fs::create_dir_all(&args.out_dir)?;
    write_trajectory(&args.out_dir.join("trajectory.csv"), &network, &sim.trajectory)?;
    std::fs::write(
        args.out_dir.join("events.json"),
        serde_json::to_string_pretty(&sim.events)? + "\n",
    )?;

    let response_time = analysis::response_time(&sim.events);
    let (mu_minus, mu_minus_empty) = match response_time {
        Some(r) => analysis::mu_lambda_minus(&realized.lambda, &spec.attack_times, r),
        None => (0.0, true),
    };
    let stats = SimStats {
        response_time,
        first_event: sim.events.first().copied(),
        sigma: realized.sigma.iter().copied().collect(),
        sigma_total: realized.sigma.sum(),
        avg_mu_lambda: realized.mean_abs_change(),
        mu_lambda_minus: mu_minus,
        mu_lambda_minus_empty: mu_minus_empty,
        cascade: analysis::cascade_size(&sim.events),
        peaks: sim.peaks,
        truncated: sim.truncated,
        collapsed: sim.collapsed,
        final_time: sim.final_state.time,
        changes: sim
            .sys_freq_at_changes
            .iter()
            .zip(realized.net_changes().iter())
            .map(|(s, &nc)| ChangePair { time: s.time, sys_freq: s.sys_freq, net_change: nc })
            .collect(),
    };
    std::fs::write(
        args.out_dir.join("stats.json"),
        serde_json::to_string_pretty(&stats)? + "\n",
    )?;

    match &stats.first_event {
        Some(e) => println!(
            "{} events, first {} at node {} t = {:.3} s; cascade {:.4} p.u.; wrote {}",
            sim.events.len(),
            e.kind.name(),
            e.target,
            e.time,
            stats.cascade.total(),
            args.out_dir.display()
        ),
        None => println!("no events over {:.1} s; wrote {}", stats.final_time, args.out_dir.display()),
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::InvalidInput(format!("csv: {e}"))
}

fn write_trajectory(
    path: &Path,
    network: &Network,
    trajectory: &[laagrid_core::dynamics::TrajectoryPoint],
) -> Result<()> {
    let n = network.n_gen + network.n_load;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string()];
    for i in 0..n {
        header.push(format!("angle_{i}"));
    }
    for i in 0..n {
        header.push(format!("speed_{i}"));
    }
    for i in 0..n {
        header.push(format!("voltage_{i}"));
    }
    for g in 0..network.n_gen {
        header.push(format!("droop_{g}"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for p in trajectory {
        let mut row = vec![p.time.to_string()];
        row.extend(p.delta.iter().map(f64::to_string));
        row.extend(p.delta_dot.iter().map(f64::to_string));
        row.extend(p.voltage_e.iter().map(f64::to_string));
        row.extend(p.governor_rho.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CoreError::InvalidInput(format!("csv: {e}")))?;
    std::fs::write(path, bytes)?;
    Ok(())
}
