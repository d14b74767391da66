//! One-dimensional testbed with an exactly known rare-event target.
//!
//! Target: pi(z) proportional to rho(z) 1{z > c} with rho log-normal
//! (log-mean 1, log-sd 5) and c its 99.9th percentile, so plain sampling
//! hits the set about once in a thousand draws. An inverse-CDF sampler for
//! the truncated law provides exact reference draws, which is what makes
//! this a distribution-level test the grid target cannot offer.
//!
//! The skipping proposal here walks from a random origin: flip a sign, jump
//! a log-uniform distance to an origin on that side of the current state,
//! then keep stepping in the same direction until landing in the set or
//! exhausting the budget. Reversing a path gives an equally likely path
//! back, so the proposal is symmetric and the usual Metropolis ratio keeps
//! the chain exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, LogNormal};

use super::{accept_reject, Algorithm};

#[derive(Clone, Debug)]
pub struct ToyTarget {
    pub log_mean: f64,
    pub log_sd: f64,
    pub threshold: f64,
    dist: LogNormal,
}

impl ToyTarget {
    pub fn new(log_mean: f64, log_sd: f64, quantile: f64) -> ToyTarget {
        let dist = LogNormal::new(log_mean, log_sd).expect("valid log-normal parameters");
        let threshold = dist.inverse_cdf(quantile);
        ToyTarget { log_mean, log_sd, threshold, dist }
    }

    /// The standard testbed: log-normal(1, 25) above its 99.9th percentile.
    pub fn standard() -> ToyTarget {
        ToyTarget::new(1.0, 5.0, 0.999)
    }

    pub fn in_set(&self, z: f64) -> bool {
        z > self.threshold
    }

    pub fn log_density(&self, z: f64) -> f64 {
        if z > 0.0 && z.is_finite() {
            self.dist.ln_pdf(z)
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Exact draw from the truncated law by inverting the CDF above c.
    pub fn reference_draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let f_c = self.dist.cdf(self.threshold);
        let u = f_c + rng.gen::<f64>() * (1.0 - f_c);
        self.dist.inverse_cdf(u)
    }

    /// Unconstrained draw from rho.
    pub fn plain_draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let n: f64 = rng.sample(rand_distr::StandardNormal);
        (self.log_mean + self.log_sd * n).exp()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyConfig {
    pub proposals: usize,
    pub seed: u64,
    /// Extra indicator checks a skipping proposal may spend.
    pub max_skips: usize,
    /// Log-uniform law shared by the origin jump and the skip distances.
    pub jump_lo: f64,
    pub jump_hi: f64,
    /// Random-walk step of the baseline sampler.
    pub rwm_sigma: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            proposals: 10_000,
            seed: 0,
            max_skips: 4,
            jump_lo: 1e6,
            jump_hi: 1e12,
            rwm_sigma: 5e9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyRun {
    /// Current state after each proposal, repeats included. NaN marks "no
    /// state" (only plain Monte Carlo misses).
    pub states: Vec<f64>,
    pub indicator_evals: u64,
    pub accepted: u64,
}

impl ToyRun {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.states.len().max(1) as f64
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u = rng.gen::<f64>();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Runs one toy chain. Chains start just inside the set (at twice the
/// threshold) so every recorded state is meaningful; burn-in discards the
/// start's influence.
pub fn run_toy(target: &ToyTarget, cfg: &ToyConfig, algorithm: Algorithm) -> ToyRun {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut run = ToyRun { states: Vec::with_capacity(cfg.proposals), indicator_evals: 0, accepted: 0 };
    let mut z = 2.0 * target.threshold;

    for _ in 0..cfg.proposals {
        match algorithm {
            Algorithm::Mc => {
                let y = target.plain_draw(&mut rng);
                run.indicator_evals += 1;
                if target.in_set(y) {
                    run.accepted += 1;
                    run.states.push(y);
                } else {
                    run.states.push(f64::NAN);
                }
            }
            Algorithm::Rwm => {
                let step: f64 = rng.sample(rand_distr::StandardNormal);
                let y = z + cfg.rwm_sigma * step;
                run.indicator_evals += 1;
                let ly = if target.in_set(y) { target.log_density(y) } else { f64::NEG_INFINITY };
                let u = rng.gen::<f64>();
                if accept_reject(Some(target.log_density(z)), ly, u) {
                    run.accepted += 1;
                    z = y;
                }
                run.states.push(z);
            }
            Algorithm::Skipping => {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut y = z + sign * log_uniform(&mut rng, cfg.jump_lo, cfg.jump_hi);
                run.indicator_evals += 1;
                let mut skips = 0usize;
                while !target.in_set(y) && skips < cfg.max_skips {
                    y += sign * log_uniform(&mut rng, cfg.jump_lo, cfg.jump_hi);
                    run.indicator_evals += 1;
                    skips += 1;
                }
                if target.in_set(y) {
                    let u = rng.gen::<f64>();
                    if accept_reject(Some(target.log_density(z)), target.log_density(y), u) {
                        run.accepted += 1;
                        z = y;
                    }
                }
                run.states.push(z);
            }
        }
    }
    run
}

/// Multiplicity-correct thinning: drop the first `burn_in_fraction` of the
/// chain (repeats included), then take exactly `count` evenly spaced states.
pub fn thin_evenly(states: &[f64], burn_in_fraction: f64, count: usize) -> Vec<f64> {
    let burn = (states.len() as f64 * burn_in_fraction).floor() as usize;
    let tail: Vec<f64> = states[burn..].iter().copied().filter(|z| z.is_finite()).collect();
    if tail.is_empty() || count == 0 {
        return Vec::new();
    }
    (0..count).map(|i| tail[i * tail.len() / count]).collect()
}
