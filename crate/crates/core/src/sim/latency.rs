use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Gaussian message delay with a hard lower cutoff and no upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub mu: f64,
    pub sigma: f64,
    pub lower_cutoff: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            mu: 500.0,
            sigma: 500.0,
            lower_cutoff: 50.0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !self.mu.is_finite() {
            return Err(format!("bad latency parameters mu={} sigma={}", self.mu, self.sigma));
        }
        if !(self.lower_cutoff > 0.0) {
            return Err(format!("latency cutoff must be positive (got {})", self.lower_cutoff));
        }
        Ok(())
    }
}

/// One delivery delay in milliseconds; draws below the cutoff are clamped to it.
pub fn sample_latency<R: Rng + ?Sized>(m: &LatencyModel, rng: &mut R) -> f64 {
    let x = Normal::new(m.mu, m.sigma)
        .map(|d| d.sample(rng))
        .unwrap_or(m.mu);
    x.max(m.lower_cutoff)
}
