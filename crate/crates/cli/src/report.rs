//! Post-processing commands: roll a sample store up into scenario tables,
//! classification tallies, and histograms, and put several runs side by side.

use std::path::Path;

use laagrid_core::analysis::{
    accepted_after_burn_in, classify_samples, histogram, reverse_governor_fit, split_by_interval,
    summarize, table_by_scenario, CellSummary, GovernorClass, ResponsePie, INTERVAL_SPLIT,
};
use laagrid_core::store::{Diagnostics, StoreContents};
use laagrid_core::{CoreError, Result};
use serde::Serialize;

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| CoreError::InvalidInput(format!("csv: {e}")))
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::InvalidInput(format!("csv: {e}"))
}

const CELL_HEADER: [&str; 17] = [
    "cell",
    "count",
    "mean_mu_lambda",
    "mean_mu_lambda_minus",
    "pre_event_empty",
    "mean_response_time",
    "mean_interval",
    "mean_sigma_total",
    "mean_nu",
    "nu_min",
    "nu_max",
    "cascade_rigs",
    "cascade_ofgs",
    "cascade_ufls",
    "cascade_uvls",
    "cascade_line",
    "cascade_line_trips",
];

fn cell_row(c: &CellSummary) -> Vec<String> {
    vec![
        c.label.clone(),
        c.count.to_string(),
        c.mean_mu_lambda.to_string(),
        c.mean_mu_lambda_minus.to_string(),
        c.pre_event_empty.to_string(),
        c.mean_response_time.to_string(),
        c.mean_interval.to_string(),
        c.mean_sigma_total.to_string(),
        c.mean_nu.to_string(),
        c.nu_min.to_string(),
        c.nu_max.to_string(),
        c.mean_cascade.rigs.to_string(),
        c.mean_cascade.ofgs.to_string(),
        c.mean_cascade.ufls.to_string(),
        c.mean_cascade.uvls.to_string(),
        c.mean_cascade.line.to_string(),
        c.mean_cascade.line_trips.to_string(),
    ]
}

fn write_cells(path: &Path, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CELL_HEADER).map_err(csv_err)?;
    for c in cells {
        w.write_record(cell_row(c)).map_err(csv_err)?;
    }
    std::fs::write(path, csv_bytes(w)?)?;
    Ok(())
}

#[derive(Serialize)]
struct AnalysisSummary {
    samples_total: usize,
    samples_after_burn_in: usize,
    burn_in: f64,
    overall: CellSummary,
    by_scenario: Vec<CellSummary>,
    fast: CellSummary,
    slow: CellSummary,
    pie: ResponsePie,
}

pub fn cmd_analyze(store_path: &Path, out_dir: &Path, burn_in: f64, bins: usize) -> Result<()> {
    let store = StoreContents::load(store_path)?;
    let records = accepted_after_burn_in(&store, burn_in);
    std::fs::create_dir_all(out_dir)?;

    let overall = summarize(&records, "all");
    let by_scenario = table_by_scenario(&records);
    let (fast, slow) = split_by_interval(&records, INTERVAL_SPLIT);
    let pie = classify_samples(&records);

    let summary = AnalysisSummary {
        samples_total: store.accepted.len(),
        samples_after_burn_in: records.len(),
        burn_in,
        overall: overall.clone(),
        by_scenario: by_scenario.clone(),
        fast: fast.clone(),
        slow: slow.clone(),
        pie,
    };
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;

    write_cells(&out_dir.join("scenario_table.csv"), &by_scenario)?;
    write_cells(&out_dir.join("interval_split.csv"), &[fast, slow])?;

    // Per-sample regression rows; samples with too few change points keep a
    // row so exclusions are visible downstream.
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["chain", "proposal", "n_points", "beta1", "p_value", "r_squared", "class"])
        .map_err(csv_err)?;
    for r in &records {
        match reverse_governor_fit(&r.stats.changes) {
            Ok(fit) => {
                let class = match fit.classification {
                    GovernorClass::ReverseGovernor => "reverse_governor",
                    GovernorClass::Positive => "positive",
                    GovernorClass::NoRelationship => "no_relationship",
                };
                w.write_record([
                    r.chain.to_string(),
                    r.proposal.to_string(),
                    fit.n_points.to_string(),
                    fit.beta1.to_string(),
                    fit.p_value.to_string(),
                    fit.r_squared.to_string(),
                    class.to_string(),
                ])
                .map_err(csv_err)?;
            }
            Err(_) => {
                w.write_record([
                    r.chain.to_string(),
                    r.proposal.to_string(),
                    r.stats.changes.len().to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "excluded".to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    std::fs::write(out_dir.join("regression.csv"), csv_bytes(w)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "count", "fraction"]).map_err(csv_err)?;
    for (label, count, frac) in [
        ("reverse_governor", pie.reverse_governor, pie.fractions[0]),
        ("positive", pie.positive, pie.fractions[1]),
        ("no_relationship", pie.no_relationship, pie.fractions[2]),
    ] {
        w.write_record([label.to_string(), count.to_string(), frac.to_string()])
            .map_err(csv_err)?;
    }
    w.write_record(["excluded".to_string(), pie.excluded.to_string(), String::new()])
        .map_err(csv_err)?;
    std::fs::write(out_dir.join("pie.csv"), csv_bytes(w)?)?;

    let mu_minus: Vec<f64> = records
        .iter()
        .filter(|r| !r.stats.mu_lambda_minus_empty)
        .map(|r| r.stats.mu_lambda_minus)
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lo", "hi", "count"]).map_err(csv_err)?;
    for b in histogram(&mu_minus, bins) {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string()])
            .map_err(csv_err)?;
    }
    std::fs::write(out_dir.join("mu_minus_hist.csv"), csv_bytes(w)?)?;

    println!(
        "{} accepted samples, {} after burn-in; wrote {}",
        store.accepted.len(),
        records.len(),
        out_dir.display()
    );
    for c in &by_scenario {
        println!(
            "  {:<10} n={:<5} mu_lambda={:<8.4} mu_minus={:<8.4} r={:<7.2} interval={:.1}",
            c.label,
            c.count,
            c.mean_mu_lambda,
            c.mean_mu_lambda_minus,
            c.mean_response_time,
            c.mean_interval
        );
    }
    Ok(())
}

pub fn cmd_compare(runs: &[std::path::PathBuf], out: &Path, burn_in: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run",
        "algorithm",
        "mode",
        "chains",
        "proposals",
        "oracle_calls",
        "accepted",
        "acceptance_rate_pct",
        "nu_min",
        "nu_max",
        "mean_mu_lambda",
        "mean_response_time",
    ])
    .map_err(csv_err)?;
    println!(
        "{:<18} {:<9} {:<8} {:>9} {:>9} {:>7} {:>7} {:>14}",
        "run", "algorithm", "mode", "proposals", "oracle", "accept", "rate %", "range nu"
    );
    for dir in runs {
        let diag = Diagnostics::load(&dir.join("diagnostics.json"))?;
        let store = StoreContents::load(&dir.join("store.jsonl"))?;
        let records = accepted_after_burn_in(&store, burn_in);
        let cell = summarize(&records, "run");
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let proposals = diag.proposals_per_chain * diag.chains;
        w.write_record([
            label.clone(),
            diag.algorithm.clone(),
            diag.mode.clone(),
            diag.chains.to_string(),
            proposals.to_string(),
            diag.oracle_calls.to_string(),
            diag.accepted.to_string(),
            (100.0 * diag.acceptance_rate).to_string(),
            cell.nu_min.to_string(),
            cell.nu_max.to_string(),
            cell.mean_mu_lambda.to_string(),
            cell.mean_response_time.to_string(),
        ])
        .map_err(csv_err)?;
        let range = if cell.count > 0 {
            format!("[{:.2}, {:.2}]", cell.nu_min, cell.nu_max)
        } else {
            "-".to_string()
        };
        println!(
            "{:<18} {:<9} {:<8} {:>9} {:>9} {:>7} {:>7.2} {:>14}",
            label,
            diag.algorithm,
            diag.mode,
            proposals,
            diag.oracle_calls,
            diag.accepted,
            100.0 * diag.acceptance_rate,
            range
        );
    }
    std::fs::write(out, csv_bytes(w)?)?;
    println!("wrote {}", out.display());
    Ok(())
}
