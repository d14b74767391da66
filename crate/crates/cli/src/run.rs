//! Sampling runs: chain driver, persisted store layout, and manifest-based
//! reproduction. A run directory is self-contained: it carries copies of the
//! network and relay config it was produced with, so a manifest can be
//! re-executed long after the original inputs moved.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use laagrid_core::sampler::{run_chain, SamplerConfig};
use laagrid_core::store::{
    sha256_file, ChainDiagnostics, Diagnostics, RunManifest, StoreRecord, StoreWriter,
};
use laagrid_core::{calibrate_n1, CoreError, ERConfig, IntegratorConfig, Network, Result};

use crate::load_er;

const STORE_FILE: &str = "store.jsonl";
const DIAGNOSTICS_FILE: &str = "diagnostics.json";
const MANIFEST_FILE: &str = "manifest.json";
const NETWORK_FILE: &str = "network.json";
const ER_CONFIG_FILE: &str = "er_config.json";

/// Runs every chain sequentially and streams records into the store in chain
/// order, acceptances interleaved right after the proposals that produced
/// them. Returns the diagnostics written next to the store.
fn drive_sampler(
    network: &Network,
    er: &ERConfig,
    integ: &IntegratorConfig,
    cfg: &SamplerConfig,
    out_dir: &Path,
) -> Result<Diagnostics> {
    let mut writer = StoreWriter::create(&out_dir.join(STORE_FILE))?;
    let mut per_chain = Vec::with_capacity(cfg.chains);
    let mut oracle_calls = 0u64;
    let mut accepted = 0u64;
    let mut truncated_states = 0u64;
    for chain in 0..cfg.chains {
        let out = run_chain(network, er, integ, cfg, chain)?;
        let mut acc = out.accepted.iter().peekable();
        for p in &out.proposals {
            writer.append(&StoreRecord::Proposal(p.clone()))?;
            while acc.peek().is_some_and(|a| a.proposal == p.proposal) {
                writer.append(&StoreRecord::Accepted(Box::new(acc.next().unwrap().clone())))?;
            }
        }
        debug_assert!(acc.next().is_none());
        let chain_accepted = out.proposals.iter().filter(|p| p.accepted_new).count() as u64;
        per_chain.push(ChainDiagnostics {
            chain,
            proposals: out.proposals.len(),
            oracle_calls: out.oracle_calls,
            accepted: chain_accepted,
            acceptance_rate: chain_accepted as f64 / out.proposals.len().max(1) as f64,
        });
        oracle_calls += out.oracle_calls;
        accepted += chain_accepted;
        truncated_states += out.truncated_states;
    }
    writer.finish()?;
    let total = (cfg.proposals * cfg.chains).max(1);
    let diagnostics = Diagnostics {
        algorithm: cfg.algorithm.name().to_string(),
        mode: cfg.mode.name().to_string(),
        chains: cfg.chains,
        proposals_per_chain: cfg.proposals,
        oracle_calls,
        accepted,
        acceptance_rate: accepted as f64 / total as f64,
        truncated_states,
        per_chain,
    };
    diagnostics.save(&out_dir.join(DIAGNOSTICS_FILE))?;
    Ok(diagnostics)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_manifest(
    out_dir: &Path,
    sampler: &SamplerConfig,
    integ: &IntegratorConfig,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: unix_now(),
        network_path: NETWORK_FILE.to_string(),
        network_sha256: sha256_file(&out_dir.join(NETWORK_FILE))?,
        er_config_path: ER_CONFIG_FILE.to_string(),
        er_config_sha256: sha256_file(&out_dir.join(ER_CONFIG_FILE))?,
        sampler: sampler.clone(),
        integrator: integ.clone(),
        store_path: STORE_FILE.to_string(),
        store_sha256: sha256_file(&out_dir.join(STORE_FILE))?,
        diagnostics_sha256: sha256_file(&out_dir.join(DIAGNOSTICS_FILE))?,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn cmd_sample(
    network_path: &Path,
    er_config: Option<&Path>,
    calibrate: bool,
    sampler: SamplerConfig,
    dt: Option<f64>,
    out_dir: &Path,
) -> Result<()> {
    let network = Network::load(network_path)?;
    let mut integ = IntegratorConfig::default_for(&network);
    if let Some(dt) = dt {
        integ.step_dt = dt;
    }
    let er = if calibrate {
        let base = ERConfig::base(&network);
        let (cfg, _) = calibrate_n1(&network, &base, &integ)?;
        if let Some(path) = er_config {
            cfg.save(path)?;
        }
        cfg
    } else {
        load_er(er_config.ok_or(CoreError::MissingCalibration)?)?
    };

    std::fs::create_dir_all(out_dir)?;
    network.save(&out_dir.join(NETWORK_FILE))?;
    er.save(&out_dir.join(ER_CONFIG_FILE))?;
    let diagnostics = drive_sampler(&network, &er, &integ, &sampler, out_dir)?;
    write_manifest(out_dir, &sampler, &integ)?;

    println!(
        "{} {} on {}: {}/{} accepted ({:.1}%), {} oracle calls, {} chain(s); wrote {}",
        diagnostics.algorithm,
        diagnostics.mode,
        network.name,
        diagnostics.accepted,
        sampler.proposals * sampler.chains,
        100.0 * diagnostics.acceptance_rate,
        diagnostics.oracle_calls,
        sampler.chains,
        out_dir.display()
    );
    Ok(())
}

/// Resolves a manifest-relative path against the manifest's directory.
fn resolve(base: &Path, recorded: &str) -> PathBuf {
    let p = Path::new(recorded);
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

pub fn cmd_rerun(manifest_path: &Path, out_dir: &Path) -> Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let network_path = resolve(base, &manifest.network_path);
    let er_path = resolve(base, &manifest.er_config_path);
    if sha256_file(&network_path)? != manifest.network_sha256 {
        return Err(CoreError::InvalidInput(format!(
            "{} no longer matches the hash in the manifest",
            network_path.display()
        )));
    }
    if sha256_file(&er_path)? != manifest.er_config_sha256 {
        return Err(CoreError::InvalidInput(format!(
            "{} no longer matches the hash in the manifest",
            er_path.display()
        )));
    }
    let network = Network::load(&network_path)?;
    let er = ERConfig::load(&er_path)?;

    std::fs::create_dir_all(out_dir)?;
    network.save(&out_dir.join(NETWORK_FILE))?;
    er.save(&out_dir.join(ER_CONFIG_FILE))?;
    drive_sampler(&network, &er, &manifest.integrator, &manifest.sampler, out_dir)?;
    let fresh = write_manifest(out_dir, &manifest.sampler, &manifest.integrator)?;

    let store_ok = fresh.store_sha256 == manifest.store_sha256;
    let diag_ok = fresh.diagnostics_sha256 == manifest.diagnostics_sha256;
    if store_ok && diag_ok {
        println!(
            "reproduced byte-identically: store sha256 {}, diagnostics sha256 {}",
            &fresh.store_sha256[..16],
            &fresh.diagnostics_sha256[..16]
        );
        Ok(())
    } else {
        eprintln!(
            "reproduction mismatch: store {} (recorded {}), diagnostics {} (recorded {})",
            &fresh.store_sha256[..16],
            &manifest.store_sha256[..16],
            &fresh.diagnostics_sha256[..16],
            &manifest.diagnostics_sha256[..16]
        );
        std::process::exit(4);
    }
}
