//! Append-only JSONL sample store plus the run diagnostics and manifest.
//!
//! Two record kinds share one file: a light line per proposal (chain
//! bookkeeping, oracle-call count, pointer to the state the chain sits on)
//! and a full line per newly accepted state carrying everything analysis
//! needs without re-running the simulator. Reruns of the same manifest must
//! reproduce the store and diagnostics byte for byte; wall-clock time is
//! therefore quarantined in the manifest.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::grid::Scenario;
use crate::protection::EventKind;

/// Load change paired with the system frequency observed at that instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangePair {
    pub time: f64,
    pub sys_freq: f64,
    pub net_change: f64,
}

/// Shed/lost power totals per relay family over the observed cascade.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CascadeTotals {
    pub rigs: f64,
    pub ofgs: f64,
    pub ufls: f64,
    pub uvls: f64,
    pub line: f64,
    pub line_trips: usize,
}

impl CascadeTotals {
    pub fn add(&mut self, kind: EventKind, magnitude: f64) {
        match kind {
            EventKind::Rigs => self.rigs += magnitude,
            EventKind::Ofgs => self.ofgs += magnitude,
            EventKind::Ufls => self.ufls += magnitude,
            EventKind::Uvls => self.uvls += magnitude,
            EventKind::Line => {
                self.line += magnitude;
                self.line_trips += 1;
            }
        }
    }

    pub fn total(&self) -> f64 {
        self.rigs + self.ofgs + self.ufls + self.uvls + self.line
    }
}

/// Everything analysis needs about one successful attack vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedStats {
    pub sigma: Vec<f64>,
    pub sigma_total: f64,
    pub nu: f64,
    pub tau: Scenario,
    pub interval: f64,
    /// Time of the first relay event.
    pub response_time: f64,
    pub first_event_kind: EventKind,
    pub first_event_target: usize,
    /// Mean |lambda| over changes strictly before the response time; zero
    /// with the flag set when no change precedes it.
    pub mu_lambda_minus: f64,
    pub mu_lambda_minus_empty: bool,
    /// Mean |lambda| over all nodes and changes.
    pub avg_mu_lambda: f64,
    pub cascade: CascadeTotals,
    /// Event log cut short (first-event sampling mode or the event cap), so
    /// cascade totals are lower bounds.
    pub truncated: bool,
    pub changes: Vec<ChangePair>,
}

/// Full accepted state, written once at its first acceptance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRecord {
    pub chain: usize,
    pub proposal: usize,
    /// Row-major eta (surface node x change), enough to replay the attack.
    pub eta: Vec<Vec<f64>>,
    pub log_density: f64,
    pub stats: AcceptedStats,
}

/// One line per proposal: how much oracle work it cost and where the chain
/// ended up. `state_idx` is the proposal index of the state the chain sits
/// on after this proposal, -1 before the first acceptance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub chain: usize,
    pub proposal: usize,
    pub evals: usize,
    pub accepted_new: bool,
    pub state_idx: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StoreRecord {
    Proposal(ProposalRecord),
    Accepted(Box<AcceptedRecord>),
}

pub struct StoreWriter {
    out: BufWriter<std::fs::File>,
}

impl StoreWriter {
    pub fn create(path: &Path) -> Result<StoreWriter> {
        let file = std::fs::File::create(path)?;
        Ok(StoreWriter { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, record: &StoreRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// In-memory view of a store file.
#[derive(Clone, Debug, Default)]
pub struct StoreContents {
    pub proposals: Vec<ProposalRecord>,
    pub accepted: Vec<AcceptedRecord>,
}

impl StoreContents {
    pub fn load(path: &Path) -> Result<StoreContents> {
        let file = std::fs::File::open(path)
            .map_err(|e| CoreError::InvalidInput(format!("{}: {e}", path.display())))?;
        let mut contents = StoreContents::default();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StoreRecord = serde_json::from_str(&line)
                .map_err(|e| CoreError::Schema(format!("line {}: {e}", lineno + 1)))?;
            match record {
                StoreRecord::Proposal(p) => contents.proposals.push(p),
                StoreRecord::Accepted(a) => contents.accepted.push(*a),
            }
        }
        Ok(contents)
    }

    /// Accepted states addressable by (chain, proposal) for repeat expansion.
    pub fn accepted_index(&self) -> HashMap<(usize, i64), &AcceptedRecord> {
        self.accepted
            .iter()
            .map(|a| ((a.chain, a.proposal as i64), a))
            .collect()
    }

    pub fn n_chains(&self) -> usize {
        self.proposals
            .iter()
            .map(|p| p.chain + 1)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub proposals: usize,
    pub oracle_calls: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
}

/// Deterministic run summary: counts only, no timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub algorithm: String,
    pub mode: String,
    pub chains: usize,
    pub proposals_per_chain: usize,
    pub oracle_calls: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub truncated_states: u64,
    pub per_chain: Vec<ChainDiagnostics>,
}

impl Diagnostics {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Diagnostics> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::InvalidInput(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything needed to reproduce a run, plus hashes to check that a rerun
/// did reproduce it. `created_unix` is the only nondeterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub created_unix: u64,
    pub network_path: String,
    pub network_sha256: String,
    pub er_config_path: String,
    pub er_config_sha256: String,
    pub sampler: crate::sampler::SamplerConfig,
    pub integrator: crate::dynamics::IntegratorConfig,
    pub store_path: String,
    pub store_sha256: String,
    pub diagnostics_sha256: String,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::InvalidInput(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Equality on everything a rerun must reproduce.
    pub fn reproduces(&self, other: &RunManifest) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.created_unix = 0;
        b.created_unix = 0;
        a == b
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CoreError::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_accepted(chain: usize, proposal: usize) -> AcceptedRecord {
        AcceptedRecord {
            chain,
            proposal,
            eta: vec![vec![1.5, -0.5], vec![0.25, 3.0]],
            log_density: -12.5,
            stats: AcceptedStats {
                sigma: vec![0.4, 1.1],
                sigma_total: 1.5,
                nu: 0.8,
                tau: Scenario::Night,
                interval: 30.0,
                response_time: 12.25,
                first_event_kind: EventKind::Ufls,
                first_event_target: 5,
                mu_lambda_minus: 0.75,
                mu_lambda_minus_empty: false,
                avg_mu_lambda: 0.6,
                cascade: {
                    let mut c = CascadeTotals::default();
                    c.add(EventKind::Ufls, 0.21);
                    c
                },
                truncated: true,
                changes: vec![ChangePair { time: 0.0, sys_freq: 0.0, net_change: 1.2 }],
            },
        }
    }

    #[test]
    fn jsonl_roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        let mut w = StoreWriter::create(&path).unwrap();
        w.append(&StoreRecord::Proposal(ProposalRecord {
            chain: 0,
            proposal: 0,
            evals: 3,
            accepted_new: true,
            state_idx: 0,
        }))
        .unwrap();
        w.append(&StoreRecord::Accepted(Box::new(sample_accepted(0, 0)))).unwrap();
        w.append(&StoreRecord::Proposal(ProposalRecord {
            chain: 0,
            proposal: 1,
            evals: 5,
            accepted_new: false,
            state_idx: 0,
        }))
        .unwrap();
        w.finish().unwrap();

        let contents = StoreContents::load(&path).unwrap();
        assert_eq!(contents.proposals.len(), 2);
        assert_eq!(contents.accepted.len(), 1);
        assert_eq!(contents.accepted[0], sample_accepted(0, 0));
        assert_eq!(contents.proposals[1].state_idx, 0);
        let idx = contents.accepted_index();
        assert!(idx.contains_key(&(0, 0)));
    }

    #[test]
    fn record_lines_are_tagged_by_kind() {
        let line = serde_json::to_string(&StoreRecord::Proposal(ProposalRecord {
            chain: 2,
            proposal: 7,
            evals: 1,
            accepted_new: false,
            state_idx: -1,
        }))
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["kind"], "proposal");
        assert_eq!(v["state_idx"], -1);
        let line = serde_json::to_string(&StoreRecord::Accepted(Box::new(sample_accepted(1, 4)))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["kind"], "accepted");
        assert_eq!(v["stats"]["first_event_kind"], "UFLS");
    }

    #[test]
    fn cascade_totals_accumulate_by_family() {
        let mut c = CascadeTotals::default();
        c.add(EventKind::Rigs, 1.0);
        c.add(EventKind::Line, 0.5);
        c.add(EventKind::Line, 0.25);
        assert_eq!(c.rigs, 1.0);
        assert_eq!(c.line, 0.75);
        assert_eq!(c.line_trips, 2);
        assert_eq!(c.total(), 1.75);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_reproduction_ignores_wall_clock() {
        let sampler = crate::sampler::SamplerConfig::default();
        let integrator = crate::dynamics::IntegratorConfig::default();
        let a = RunManifest {
            version: "0.1.0".into(),
            created_unix: 100,
            network_path: "ktas.json".into(),
            network_sha256: "x".into(),
            er_config_path: "er.json".into(),
            er_config_sha256: "y".into(),
            sampler: sampler.clone(),
            integrator: integrator.clone(),
            store_path: "s.jsonl".into(),
            store_sha256: "z".into(),
            diagnostics_sha256: "w".into(),
        };
        let mut b = a.clone();
        b.created_unix = 999;
        assert!(a.reproduces(&b));
        b.store_sha256 = "different".into();
        assert!(!a.reproduces(&b));
    }
}
