//! Post-run statistics over sample stores: first-event response times,
//! pre-event change magnitudes, cascade tallies, the net-change-vs-frequency
//! regression classifier, and the two-sample tests used to compare scenarios
//! and algorithms. Everything here is pure post-processing; nothing touches
//! the integrator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CoreError, Result};
use crate::grid::Scenario;
use crate::protection::EREvent;
use crate::store::{AcceptedRecord, CascadeTotals, ChangePair, StoreContents};

/// Two-sided significance level shared by the slope test and the scenario
/// comparisons.
pub const P_SIGNIFICANT: f64 = 0.05;

/// Kolmogorov-Smirnov scaling constants: the rejection threshold for a
/// two-sample test is `c(alpha) * sqrt((n + m) / (n * m))`.
pub const KS_C_ALPHA_001: f64 = 1.628;
pub const KS_C_ALPHA_005: f64 = 1.358;

/// Fraction of each chain's accepted samples dropped before computing
/// summary statistics.
pub const BURN_IN_FRACTION: f64 = 0.10;

/// Interval boundary separating fast from slow dynamic attacks when
/// splitting summaries, in seconds.
pub const INTERVAL_SPLIT: f64 = 30.0;

/// Time of the earliest event, with ties broken by kind priority and then
/// target index. None means the run produced no events at all.
pub fn response_time(events: &[EREvent]) -> Option<f64> {
    events
        .iter()
        .min_by(|a, b| {
            (a.time, a.kind, a.target)
                .partial_cmp(&(b.time, b.kind, b.target))
                .expect("event times are finite")
        })
        .map(|e| e.time)
}

/// Mean |change| over every node and every change time strictly before `r`.
/// The flag reports an empty window (nothing changed before the first event),
/// in which case the mean is reported as zero.
pub fn mu_lambda_minus(lambda: &DMatrix<f64>, attack_times: &[f64], r: f64) -> (f64, bool) {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (j, &tj) in attack_times.iter().enumerate() {
        if tj < r {
            for i in 0..lambda.nrows() {
                sum += lambda[(i, j)].abs();
                count += 1;
            }
        }
    }
    if count == 0 { (0.0, true) } else { (sum / count as f64, false) }
}

/// Power disconnected per relay kind over a whole event log.
pub fn cascade_size(events: &[EREvent]) -> CascadeTotals {
    let mut totals = CascadeTotals::default();
    for e in events {
        totals.add(e.kind, e.magnitude);
    }
    totals
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GovernorClass {
    /// Net load moves against frequency: significant negative slope.
    ReverseGovernor,
    /// Significant positive slope.
    Positive,
    /// No significant slope, or a degenerate fit.
    NoRelationship,
}

/// Least-squares fit of net load change on system frequency across the
/// change instants of one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionResult {
    pub beta0: f64,
    pub beta1: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Set when the frequency column has zero variance, so no slope exists.
    pub degenerate: bool,
    pub classification: GovernorClass,
}

fn classify(beta1: f64, p_value: f64) -> GovernorClass {
    if p_value < P_SIGNIFICANT && beta1 < 0.0 {
        GovernorClass::ReverseGovernor
    } else if p_value < P_SIGNIFICANT && beta1 > 0.0 {
        GovernorClass::Positive
    } else {
        GovernorClass::NoRelationship
    }
}

/// OLS slope of net change on frequency with a two-sided t-test on the slope.
/// Samples with fewer than three change points carry too little information
/// and are rejected so callers can exclude them from the tallies.
pub fn reverse_governor_fit(pairs: &[ChangePair]) -> Result<RegressionResult> {
    let n = pairs.len();
    if n < 3 {
        return Err(CoreError::InvalidInput(format!(
            "regression needs at least 3 change points, got {n}"
        )));
    }
    let nf = n as f64;
    let xbar = pairs.iter().map(|p| p.sys_freq).sum::<f64>() / nf;
    let ybar = pairs.iter().map(|p| p.net_change).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for p in pairs {
        let dx = p.sys_freq - xbar;
        let dy = p.net_change - ybar;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Ok(RegressionResult {
            beta0: ybar,
            beta1: 0.0,
            t_stat: 0.0,
            p_value: 1.0,
            r_squared: 0.0,
            n_points: n,
            degenerate: true,
            classification: GovernorClass::NoRelationship,
        });
    }
    let beta1 = sxy / sxx;
    let beta0 = ybar - beta1 * xbar;
    let ss_res = (syy - beta1 * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 0.0 };
    let df = (n - 2) as f64;
    let se2 = ss_res / df / sxx;
    let (t_stat, p_value) = if se2 <= 0.0 {
        // Exact fit: an actual slope is infinitely significant, a flat line
        // through constant data is not significant at all.
        if beta1 == 0.0 { (0.0, 1.0) } else { (f64::INFINITY * beta1.signum(), 0.0) }
    } else {
        let t = beta1 / se2.sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Ok(RegressionResult {
        beta0,
        beta1,
        t_stat,
        p_value,
        r_squared,
        n_points: n,
        degenerate: false,
        classification: classify(beta1, p_value),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance two-sample t-test, two-sided. Equal means short
/// out to p = 1 before the variance check so identical samples compare equal
/// instead of erroring.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CoreError::InvalidInput(format!(
            "t-test needs at least 2 points per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;
    let denom = sa + sb;
    if ma == mb {
        let df = if denom > 0.0 {
            denom * denom
                / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64)
        } else {
            (a.len() + b.len() - 2) as f64
        };
        return Ok(WelchTest { t: 0.0, df, p_value: 1.0 });
    }
    if denom == 0.0 {
        return Err(CoreError::DegenerateStatistics(
            "both samples are constant with different means".into(),
        ));
    }
    let t = (ma - mb) / denom.sqrt();
    let df =
        denom * denom / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok(WelchTest { t, df, p_value: 2.0 * (1.0 - dist.cdf(t.abs())) })
}

/// Two-sample Kolmogorov-Smirnov statistic, the sup distance between
/// empirical CDFs. Tied values are consumed from both samples before the
/// distance is measured.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::InvalidInput("KS test needs non-empty samples".into()));
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(CoreError::InvalidInput("KS test requires finite samples".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = sa[i].min(sb[j]);
        while i < n && sa[i] == x {
            i += 1;
        }
        while j < m && sb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    Ok(d)
}

/// Rejection threshold for the two-sample KS statistic at the level encoded
/// by `c_alpha` (see the KS_C_ALPHA constants).
pub fn ks_critical(c_alpha: f64, n: usize, m: usize) -> f64 {
    c_alpha * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Accepted samples surviving burn-in, in (chain, proposal) order. Burn-in
/// drops the first floor(burn * k) of each chain's k accepted samples.
pub fn accepted_after_burn_in(store: &StoreContents, burn: f64) -> Vec<&AcceptedRecord> {
    let mut chains: Vec<usize> = store.accepted.iter().map(|r| r.chain).collect();
    chains.sort_unstable();
    chains.dedup();
    let mut out = Vec::new();
    for chain in chains {
        let mut recs: Vec<&AcceptedRecord> =
            store.accepted.iter().filter(|r| r.chain == chain).collect();
        recs.sort_by_key(|r| r.proposal);
        let drop = (recs.len() as f64 * burn).floor() as usize;
        out.extend(recs.into_iter().skip(drop));
    }
    out
}

/// Component-wise average cascade over a set of samples. Fractional trip
/// counts are deliberate: they are per-sample expectations.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CascadeMeans {
    pub rigs: f64,
    pub ofgs: f64,
    pub ufls: f64,
    pub uvls: f64,
    pub line: f64,
    pub line_trips: f64,
}

/// Per-cell roll-up of accepted samples; cells are scenarios, interval bands,
/// or whole runs depending on the caller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub count: usize,
    /// Mean of each sample's average |change| over the full schedule.
    pub mean_mu_lambda: f64,
    /// Mean pre-event |change|, over samples whose window was non-empty.
    pub mean_mu_lambda_minus: f64,
    /// Samples where nothing changed before the first event.
    pub pre_event_empty: usize,
    pub mean_response_time: f64,
    pub mean_interval: f64,
    pub mean_sigma_total: f64,
    pub mean_nu: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    pub mean_cascade: CascadeMeans,
}

/// Means over a slice of accepted records. An empty slice yields a zeroed
/// summary with count 0 so tables keep a row for every cell.
pub fn summarize(records: &[&AcceptedRecord], label: &str) -> CellSummary {
    let count = records.len();
    if count == 0 {
        return CellSummary {
            label: label.to_string(),
            count: 0,
            mean_mu_lambda: 0.0,
            mean_mu_lambda_minus: 0.0,
            pre_event_empty: 0,
            mean_response_time: 0.0,
            mean_interval: 0.0,
            mean_sigma_total: 0.0,
            mean_nu: 0.0,
            nu_min: 0.0,
            nu_max: 0.0,
            mean_cascade: CascadeMeans::default(),
        };
    }
    let nf = count as f64;
    let mut mu = 0.0;
    let mut mu_minus = 0.0;
    let mut mu_minus_n = 0usize;
    let mut rt = 0.0;
    let mut interval = 0.0;
    let mut sigma = 0.0;
    let mut nu_sum = 0.0;
    let mut nu_min = f64::INFINITY;
    let mut nu_max = f64::NEG_INFINITY;
    let mut cascade = CascadeMeans::default();
    for r in records {
        let s = &r.stats;
        mu += s.avg_mu_lambda;
        if !s.mu_lambda_minus_empty {
            mu_minus += s.mu_lambda_minus;
            mu_minus_n += 1;
        }
        rt += s.response_time;
        interval += s.interval;
        sigma += s.sigma_total;
        nu_sum += s.nu;
        nu_min = nu_min.min(s.nu);
        nu_max = nu_max.max(s.nu);
        cascade.rigs += s.cascade.rigs;
        cascade.ofgs += s.cascade.ofgs;
        cascade.ufls += s.cascade.ufls;
        cascade.uvls += s.cascade.uvls;
        cascade.line += s.cascade.line;
        cascade.line_trips += s.cascade.line_trips as f64;
    }
    cascade.rigs /= nf;
    cascade.ofgs /= nf;
    cascade.ufls /= nf;
    cascade.uvls /= nf;
    cascade.line /= nf;
    cascade.line_trips /= nf;
    CellSummary {
        label: label.to_string(),
        count,
        mean_mu_lambda: mu / nf,
        mean_mu_lambda_minus: if mu_minus_n > 0 { mu_minus / mu_minus_n as f64 } else { 0.0 },
        pre_event_empty: count - mu_minus_n,
        mean_response_time: rt / nf,
        mean_interval: interval / nf,
        mean_sigma_total: sigma / nf,
        mean_nu: nu_sum / nf,
        nu_min,
        nu_max,
        mean_cascade: cascade,
    }
}

/// One row per scenario in fixed scenario order, including empty cells.
pub fn table_by_scenario(records: &[&AcceptedRecord]) -> Vec<CellSummary> {
    Scenario::ALL
        .iter()
        .map(|&tau| {
            let cell: Vec<&AcceptedRecord> =
                records.iter().filter(|r| r.stats.tau == tau).copied().collect();
            summarize(&cell, tau.name())
        })
        .collect()
}

/// Splits dynamic-attack samples into fast (interval < threshold) and slow
/// (interval >= threshold) bands.
pub fn split_by_interval(
    records: &[&AcceptedRecord],
    threshold: f64,
) -> (CellSummary, CellSummary) {
    let fast: Vec<&AcceptedRecord> =
        records.iter().filter(|r| r.stats.interval < threshold).copied().collect();
    let slow: Vec<&AcceptedRecord> =
        records.iter().filter(|r| r.stats.interval >= threshold).copied().collect();
    (summarize(&fast, "fast"), summarize(&slow, "slow"))
}

/// Classification tallies for the frequency-response pie. Fractions are over
/// classified samples; `excluded` counts samples with fewer than three change
/// points, which carry no slope information.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ResponsePie {
    pub reverse_governor: usize,
    pub positive: usize,
    pub no_relationship: usize,
    pub excluded: usize,
    pub fractions: [f64; 3],
}

/// Runs the regression classifier over every sample and tallies the classes.
pub fn classify_samples(records: &[&AcceptedRecord]) -> ResponsePie {
    let mut pie = ResponsePie::default();
    for r in records {
        match reverse_governor_fit(&r.stats.changes) {
            Ok(fit) => match fit.classification {
                GovernorClass::ReverseGovernor => pie.reverse_governor += 1,
                GovernorClass::Positive => pie.positive += 1,
                GovernorClass::NoRelationship => pie.no_relationship += 1,
            },
            Err(_) => pie.excluded += 1,
        }
    }
    let classified = (pie.reverse_governor + pie.positive + pie.no_relationship) as f64;
    if classified > 0.0 {
        pie.fractions = [
            pie.reverse_governor as f64 / classified,
            pie.positive as f64 / classified,
            pie.no_relationship as f64 / classified,
        ];
    }
    pie
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over the finite values. A constant sample collapses
/// to a single bin; the top edge is inclusive.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![HistogramBin { lo, hi, count: finite.len() }];
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lo: lo + k as f64 * width,
            hi: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in finite {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        out[k].count += 1;
    }
    out
}
