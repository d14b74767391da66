//! Severity density on the per-node disruption totals.
//!
//! Each component of Sigma is scored by a heavy-tailed log-normal marginal
//! (log-mean 1, log-sd 5) and the components multiply, so the target rewards
//! attacks that disrupt much while the success indicator confines the chain
//! to vectors that actually break through the protection.

use nalgebra::DVector;
use statrs::distribution::{Continuous, LogNormal};

pub const SIGMA_LOG_MEAN: f64 = 1.0;
pub const SIGMA_LOG_SD: f64 = 5.0;

/// Sum of log-normal log-pdfs over the entries; -inf when any entry is not
/// strictly positive (a node with zero disruption has density zero).
pub fn log_sigma_density_with(sigma: &DVector<f64>, log_mean: f64, log_sd: f64) -> f64 {
    let marginal = LogNormal::new(log_mean, log_sd).expect("valid log-normal parameters");
    let mut total = 0.0;
    for &s in sigma.iter() {
        if !(s > 0.0) || !s.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += marginal.ln_pdf(s);
    }
    total
}

pub fn log_sigma_density(sigma: &DVector<f64>) -> f64 {
    log_sigma_density_with(sigma, SIGMA_LOG_MEAN, SIGMA_LOG_SD)
}
