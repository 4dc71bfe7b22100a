use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Error, Result};
use crate::rng;

/// Privacy hyperparameters of one DP-FedAvg training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSpec {
    /// L2 clip bound `S` on each user's update.
    pub clip: f64,
    /// Noise multiplier `z`.
    pub noise_multiplier: f64,
    /// Users per round, `qN`.
    pub cohort_size: usize,
    /// Population size `N` the cohort is drawn from.
    pub population: usize,
    /// Number of rounds `T`.
    pub rounds: u64,
    pub delta: f64,
}

impl DpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::invalid(format!("clip S must be > 0, got {}", self.clip)));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::invalid(format!(
                "noise multiplier z must be finite and >= 0, got {}",
                self.noise_multiplier
            )));
        }
        if self.cohort_size == 0 || self.cohort_size > self.population {
            return Err(Error::invalid(format!(
                "cohort size qN = {} must be in 1..={}",
                self.cohort_size, self.population
            )));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds T must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Participation fraction `q = qN / N`.
    pub fn sampling_rate(&self) -> f64 {
        self.cohort_size as f64 / self.population as f64
    }

    pub fn noise_stddev(&self) -> f64 {
        noise_stddev(self)
    }
}

/// Standard deviation of the Gaussian noise added to the averaged update,
/// `σ = z·S / qN`.
pub fn noise_stddev(spec: &DpSpec) -> f64 {
    spec.noise_multiplier * spec.clip / spec.cohort_size as f64
}

/// Scales `delta` onto the L2 ball of radius `clip`. Vectors already inside the
/// ball are returned unchanged.
pub fn clip_update(delta: &ParamVector, clip: f64) -> Result<ParamVector> {
    if !(clip > 0.0) {
        return Err(Error::invalid(format!("clip S must be > 0, got {clip}")));
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite {
            node: 0,
            op: "clip_update",
        });
    }
    let norm = delta.norm();
    if norm <= clip {
        return Ok(delta.clone());
    }
    Ok(delta.scaled(clip / norm))
}

/// Adds i.i.d. `N(0, sigma²)` noise to every coordinate.
pub fn gaussianize(v: &ParamVector, sigma: f64, seed: u64) -> Result<ParamVector> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let mut rng = rng::stream(seed);
    let mut out = v.clone();
    for x in out.values_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *x += sigma * n;
    }
    Ok(out)
}
