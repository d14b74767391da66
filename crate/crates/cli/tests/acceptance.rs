//! The release gate: eleven end-to-end checks over the shipped crates and
//! configs. Each test prints a PASS line with its measured evidence (visible
//! under --nocapture); any failed assert fails the gate.

use std::path::PathBuf;
use std::time::Instant;

use laagrid_core::analysis::{self, WelchTest};
use laagrid_core::attack::{build_schedule, commanded_load, realized_changes, T_MAX};
use laagrid_core::dynamics::IntegratorConfig;
use laagrid_core::protection::inspect;
use laagrid_core::sampler::toy::{run_toy, thin_evenly, ToyConfig, ToyTarget};
use laagrid_core::sampler::{accept_reject, run_chain, Algorithm, AttackMode, SamplerConfig};
use laagrid_core::store::ChangePair;
use laagrid_core::{
    apply_scenario, calibrate_n1, effective_load_factor, find_equilibrium, ieee39,
    integrate_with_events, ktas, reverse_governor_fit, welch_t_test, AttackSpec, ERConfig,
    EventKind, GovernorClass, Network, Scenario,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

#[test]
fn a01_zero_attack_stays_at_equilibrium() {
    for network in [ktas(), ieee39()] {
        let integ = IntegratorConfig::default_for(&network);
        for tau in Scenario::ALL {
            let rest = find_equilibrium(&network, tau).unwrap();
            let spec = AttackSpec::zero(&network, tau);
            let er = ERConfig::base(&network);
            let started = Instant::now();
            let out = integrate_with_events(&rest, &spec, &er, &network, &integ).unwrap();
            let wall = started.elapsed().as_secs_f64();
            assert!(out.events.is_empty(), "{} {tau:?}: {:?}", network.name, out.events);
            assert!(
                out.peaks.max_abs_omega < 1e-6,
                "{} {tau:?}: max |w| = {:.3e}",
                network.name,
                out.peaks.max_abs_omega
            );
            assert!(wall < 10.0, "{} {tau:?}: {wall:.1} s", network.name);
        }
    }
    println!("PASS equilibrium fidelity: 8 quiet 60 s runs, all under 1e-6 rad/s");
}

#[test]
fn a02_calibrated_networks_ride_through_every_single_outage() {
    for network in [ktas(), ieee39()] {
        let integ = IntegratorConfig::default_for(&network);
        let started = Instant::now();
        let (_, report) = calibrate_n1(&network, &ERConfig::base(&network), &integ).unwrap();
        let wall = started.elapsed().as_secs_f64();
        let failed: Vec<_> = report.cases.iter().filter(|c| !c.pass).collect();
        assert!(report.all_pass, "{}: {} dirty cases: {failed:?}", network.name, failed.len());
        assert!(wall < 300.0, "{}: calibration took {wall:.0} s", network.name);
        println!(
            "PASS n-1 ride-through on {}: {} contingency cases clean in {wall:.0} s",
            network.name,
            report.cases.len()
        );
    }
}

#[test]
fn a03_vulnerable_load_never_leaves_the_clamp_band() {
    let mut rng = ChaCha20Rng::seed_from_u64(40);
    for network in [ktas(), ieee39()] {
        let surface = network.attack_surface();
        let arrays = network.node_arrays();
        let l = surface.len();
        for _ in 0..5_000 {
            let interval = rng.gen_range(1.0..T_MAX);
            let (n, times) = build_schedule(interval, T_MAX).unwrap();
            let eta = DMatrix::from_fn(l, n, |_, _| rng.gen_range(-1.0..5.0));
            let nu: f64 = rng.gen();
            let tau = Scenario::from_index(rng.gen_range(1..=4)).unwrap();
            let spec = AttackSpec::new(eta, nu, tau, interval, T_MAX).unwrap();

            let loads = apply_scenario(&network, tau);
            let p_eq = DVector::from_iterator(l, surface.iter().map(|&i| loads[i]));
            let p_tl = DVector::from_iterator(l, surface.iter().map(|&i| arrays.p_total_tl[i]));
            for &t in &times {
                let u_hat = commanded_load(&spec, &p_eq, t);
                for i in 0..l {
                    let vulnerable = nu * (p_eq[i] + u_hat[i]).clamp(0.0, p_tl[i]);
                    assert!(vulnerable >= 0.0, "negative vulnerable load {vulnerable}");
                    assert!(
                        vulnerable <= nu * p_tl[i],
                        "vulnerable {vulnerable} above {}",
                        nu * p_tl[i]
                    );
                }
            }

            let mut zeroed = spec;
            zeroed.nu = 0.0;
            let realized = realized_changes(&zeroed, &p_eq, &p_tl);
            assert!(realized.sigma.iter().all(|&s| s == 0.0), "nu=0 left sigma nonzero");
        }
    }
    println!("PASS clamp authority: 10^4 random attacks stayed inside [0, nu*P_TL], nu=0 inert");
}

#[test]
fn a04_toy_chain_matches_inverse_cdf_reference() {
    let started = Instant::now();
    let target = ToyTarget::standard();
    let cfg = ToyConfig { proposals: 60_000, seed: 11, ..ToyConfig::default() };
    let run = run_toy(&target, &cfg, Algorithm::Skipping);
    assert!(run.accepted >= 5_000, "only {} accepted", run.accepted);

    let chain = thin_evenly(&run.states, 0.1, 5_000);
    let mut reference_rng = ChaCha20Rng::seed_from_u64(271_828);
    let reference: Vec<f64> = (0..5_000).map(|_| target.reference_draw(&mut reference_rng)).collect();

    let d = analysis::ks_statistic(&chain, &reference).unwrap();
    let critical = analysis::ks_critical(analysis::KS_C_ALPHA_001, chain.len(), reference.len());
    let wall = started.elapsed().as_secs_f64();
    assert!(d < critical, "KS D = {d:.4} at critical {critical:.4}");
    assert!(wall < 60.0, "toy check took {wall:.0} s");
    println!("PASS toy distribution: KS D = {d:.4} < {critical:.4} ({wall:.1} s)");
}

#[test]
fn a05_samplers_rank_by_toy_hit_rate() {
    let target = ToyTarget::standard();
    let cfg = ToyConfig::default();
    let mc = run_toy(&target, &cfg, Algorithm::Mc).acceptance_rate();
    let rwm = run_toy(&target, &cfg, Algorithm::Rwm).acceptance_rate();
    let skipping = run_toy(&target, &cfg, Algorithm::Skipping).acceptance_rate();
    assert!(
        skipping > rwm && rwm > mc,
        "rates not ordered: skipping {skipping:.4}, rwm {rwm:.4}, mc {mc:.4}"
    );
    assert!(mc < 0.01, "plain Monte Carlo rate {mc:.4} is not near zero");
    println!("PASS sampler ordering: skipping {skipping:.3} > rwm {rwm:.3} > mc {mc:.4}");
}

#[test]
fn a06_metropolis_branch_rules_are_exact() {
    // Higher or equal density: accepted no matter the uniform draw.
    assert!(accept_reject(Some(-5.0), -1.0, 0.999_999));
    assert!(accept_reject(Some(-1.0), -1.0, 0.999_999));
    // Out-of-set proposal (density zero): rejected no matter the draw.
    assert!(!accept_reject(None, f64::NEG_INFINITY, 0.5));
    assert!(!accept_reject(Some(-1.0), f64::NEG_INFINITY, 1e-12));
    // No current state, or a current state of density zero: any in-set
    // proposal is accepted.
    assert!(accept_reject(None, -50.0, 0.999_999));
    assert!(accept_reject(Some(f64::NEG_INFINITY), -50.0, 0.999_999));
    // Lower density: the draw decides, and a rejection repeats the state.
    assert!(accept_reject(Some(-1.0), -3.0, 0.1));
    assert!(!accept_reject(Some(-1.0), -3.0, 0.9));

    let run = run_toy(&ToyTarget::standard(), &ToyConfig::default(), Algorithm::Rwm);
    let repeated = run
        .states
        .windows(2)
        .any(|w| w[0].is_finite() && w[0] == w[1]);
    assert!(repeated, "no rejection ever repeated the current state");
    println!("PASS Metropolis branches: accept/reject rules exact, rejections repeat the state");
}

/// One sampling cell of the scenario comparison: fixed mode and demand
/// scenario, chains run until the cell holds at least 300 accepted samples.
fn sampled_mu_lambda(
    network: &Network,
    er: &ERConfig,
    mode: AttackMode,
    tau: Scenario,
    seed: u64,
) -> Vec<f64> {
    let mut integ = IntegratorConfig::default_for(network);
    // Failure is decided by the first relay event; nothing after it feeds the
    // accepted-change statistics, so skip the tail.
    integ.stop_at_first_event = true;
    let cfg = SamplerConfig {
        algorithm: Algorithm::Skipping,
        mode,
        proposals: 700,
        seed,
        scenario: Some(tau),
        ..SamplerConfig::default()
    };
    let mut mu = Vec::new();
    for chain in 0.. {
        assert!(chain < 12, "cell {mode:?}/{tau:?} stuck at {} accepted", mu.len());
        let out = run_chain(network, er, &integ, &cfg, chain).unwrap();
        mu.extend(out.accepted.iter().map(|a| a.stats.avg_mu_lambda));
        if mu.len() >= 300 {
            break;
        }
    }
    mu
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn a07_busier_scenarios_break_with_smaller_changes() {
    let network = ktas();
    let er = ERConfig::load(&config("er_ktas.json")).unwrap();
    let cells = [
        (AttackMode::Static, Scenario::Night),
        (AttackMode::Static, Scenario::Evening),
        (AttackMode::Dynamic, Scenario::Night),
        (AttackMode::Dynamic, Scenario::Evening),
    ];
    let results: Vec<Vec<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .enumerate()
            .map(|(k, &(mode, tau))| {
                let (network, er) = (&network, &er);
                scope.spawn(move || sampled_mu_lambda(network, er, mode, tau, 90 + k as u64))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let [static_night, static_evening, dynamic_night, dynamic_evening] = &results[..] else {
        unreachable!()
    };

    let sn = mean(static_night);
    let se = mean(static_evening);
    let dn = mean(dynamic_night);
    let de = mean(dynamic_evening);
    assert!(se < sn, "static: evening {se:.3} not below night {sn:.3}");
    assert!(de < dn, "dynamic: evening {de:.3} not below night {dn:.3}");

    let pooled_static: Vec<f64> =
        static_night.iter().chain(static_evening).copied().collect();
    let pooled_dynamic: Vec<f64> =
        dynamic_night.iter().chain(dynamic_evening).copied().collect();
    let WelchTest { p_value, .. } = welch_t_test(&pooled_dynamic, &pooled_static).unwrap();
    let (md, ms) = (mean(&pooled_dynamic), mean(&pooled_static));
    assert!(md < ms, "dynamic mean {md:.3} not below static mean {ms:.3}");
    assert!(p_value < 0.05, "Welch p = {p_value:.3e}");
    println!(
        "PASS scenario direction: evening < night ({se:.3}<{sn:.3} static, {de:.3}<{dn:.3} \
         dynamic), dynamic {md:.3} < static {ms:.3} at p = {p_value:.1e}"
    );
}

fn synthetic_pairs(slope: f64) -> Vec<ChangePair> {
    let freq = [0.0, -0.1, -0.2, -0.3, -0.35];
    let noise = [0.01, -0.02, 0.015, 0.0, -0.01];
    freq.iter()
        .zip(noise)
        .enumerate()
        .map(|(j, (&f, e))| ChangePair {
            time: j as f64,
            sys_freq: f,
            net_change: 2.0 + slope * f + e,
        })
        .collect()
}

#[test]
fn a08_slope_sign_drives_classification() {
    let down = reverse_governor_fit(&synthetic_pairs(-3.0)).unwrap();
    assert_eq!(down.classification, GovernorClass::ReverseGovernor);
    let up = reverse_governor_fit(&synthetic_pairs(3.0)).unwrap();
    assert_eq!(up.classification, GovernorClass::Positive);
    let flat = reverse_governor_fit(&synthetic_pairs(0.0)).unwrap();
    assert_eq!(flat.classification, GovernorClass::NoRelationship);

    // Reporting frequency in Hz and load in MW must not move the verdict.
    let rescaled: Vec<ChangePair> = synthetic_pairs(-3.0)
        .into_iter()
        .map(|p| ChangePair {
            time: p.time,
            sys_freq: p.sys_freq / (2.0 * std::f64::consts::PI),
            net_change: p.net_change * 100.0,
        })
        .collect();
    let fit = reverse_governor_fit(&rescaled).unwrap();
    assert_eq!(fit.classification, down.classification);
    assert!((fit.p_value - down.p_value).abs() < 1e-12);
    assert!((fit.r_squared - down.r_squared).abs() < 1e-12);
    println!(
        "PASS slope classifier: -3 / +3 / 0 map to the three classes, rescaling invariant \
         (p = {:.2e})",
        down.p_value
    );
}

#[test]
fn a09_relay_one_shots_and_ladder_order() {
    let network = ktas();
    let cfg = ERConfig::base(&network);
    let rest = find_equilibrium(&network, Scenario::Night).unwrap();
    let p_hat = apply_scenario(&network, Scenario::Night);
    let p_gen = DVector::zeros(network.n_gen);
    let rocof = vec![0.0; network.n_gen];
    let flows = vec![0.0; network.interconnectors.len()];
    let node = network.relay_nodes().next().unwrap();
    let scan = |state: &laagrid_core::SystemState| {
        inspect(state, &rocof, &flows, &p_hat, &p_gen, &network, &cfg)
    };

    // UFLS walks its four stages in order, one per inspection, then stops.
    let mut state = rest.clone();
    state.delta_dot[node] = -4.0 * std::f64::consts::PI - 0.1;
    for stage in 0..4u8 {
        state.ufls_count_f[node] = stage;
        let events = scan(&state);
        assert_eq!(events.len(), 1, "stage {stage}: {events:?}");
        assert_eq!(events[0].kind, EventKind::Ufls);
        assert!((events[0].magnitude - 0.1 * p_hat[node]).abs() < 1e-12);
    }
    state.ufls_count_f[node] = 4;
    assert!(scan(&state).is_empty(), "a fifth shed stage fired");
    // A shallow dip only reaches the first rung.
    state.delta_dot[node] = -std::f64::consts::PI - 0.01;
    state.ufls_count_f[node] = 1;
    assert!(scan(&state).is_empty(), "rung 2 fired above its threshold");

    // UVLS holds for 5 s, fires, and never rearms.
    let mut state = rest.clone();
    state.uvls_timer[node] = 4.999;
    assert!(scan(&state).is_empty(), "UVLS fired before the hold elapsed");
    state.uvls_timer[node] = 5.0;
    let events = scan(&state);
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].kind, EventKind::Uvls);
    state.uvls_flag_v[node] = true;
    state.uvls_timer[node] = 100.0;
    assert!(scan(&state).is_empty(), "UVLS fired twice");

    assert_eq!(effective_load_factor(0, false), 1.0);
    assert!((effective_load_factor(2, false) - 0.8).abs() < 1e-12);
    assert!((effective_load_factor(4, true) - 0.55).abs() < 1e-12);
    println!("PASS relay semantics: UFLS ladder ordered, UVLS one-shot, load factors 1/0.8/0.55");
}

#[test]
fn a10_night_cascade_sheds_load_before_tripping_generation() {
    let network = ieee39();
    let spec = AttackSpec::load(&config("night_cascade.json")).unwrap();
    let er = ERConfig::load(&config("er_night_cascade.json")).unwrap();
    assert_eq!(spec.tau, Scenario::Night);
    let rest = find_equilibrium(&network, spec.tau).unwrap();
    let integ = IntegratorConfig::default_for(&network);

    let started = Instant::now();
    let out = integrate_with_events(&rest, &spec, &er, &network, &integ).unwrap();
    let wall = started.elapsed().as_secs_f64();

    let shed = out
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::Ufls | EventKind::Uvls))
        .expect("no load-shed event");
    let trip = out
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::Rigs | EventKind::Ofgs))
        .expect("no generator disconnection");
    assert!(shed.time < trip.time, "shed {:.2} not before trip {:.2}", shed.time, trip.time);
    assert!((shed.time - 51.0).abs() <= 10.0, "shed at {:.2} s", shed.time);
    assert!((trip.time - 59.0).abs() <= 10.0, "trip at {:.2} s", trip.time);

    let cascade = analysis::cascade_size(&out.events);
    assert!(cascade.ufls > 0.0, "no shed power recorded");
    assert!(cascade.rigs + cascade.ofgs > 0.0, "no generation loss recorded");
    assert!(wall < 30.0, "replay took {wall:.1} s");
    println!(
        "PASS night cascade: shed {:.2} s before generator trip {:.2} s ({wall:.1} s)",
        shed.time, trip.time
    );
}

#[test]
fn a11_recorded_runs_reproduce_byte_for_byte() {
    let bin = env!("CARGO_BIN_EXE_laagrid");
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "laagrid {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };

    let network = path("ktas.json");
    run(&["export-network", "--name", "ktas", "--out", network.to_str().unwrap()]);
    let first = path("first");
    run(&[
        "sample",
        "--network",
        network.to_str().unwrap(),
        "--calibrate",
        "--algorithm",
        "skipping",
        "--proposals",
        "30",
        "--chains",
        "2",
        "--seed",
        "7",
        "--dt",
        "5e-3",
        "--out-dir",
        first.to_str().unwrap(),
    ]);
    let second = path("second");
    run(&[
        "rerun",
        "--manifest",
        first.join("manifest.json").to_str().unwrap(),
        "--out-dir",
        second.to_str().unwrap(),
    ]);

    for name in ["store.jsonl", "diagnostics.json"] {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
    println!("PASS determinism: manifest rerun reproduced store and diagnostics byte for byte");
}
