use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform tie-breaking noise added to base scores before calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DitherConfig {
    /// Noise width `u`; the noise is uniform on `[0, u]`. Zero disables dithering.
    pub u: f64,
    pub seed: u64,
    /// Also dither scores at prediction time.
    #[serde(default)]
    pub at_prediction: bool,
}

impl DitherConfig {
    pub fn new(u: f64, seed: u64) -> Result<Self> {
        if !(u.is_finite() && u >= 0.0) {
            return Err(invalid(format!(
                "dither width must be finite and >= 0, got {u}"
            )));
        }
        Ok(Self {
            u,
            seed,
            at_prediction: false,
        })
    }

    pub fn off() -> Self {
        Self {
            u: 0.0,
            seed: 0,
            at_prediction: false,
        }
    }

    /// Clips a raw base score to `[-A, A - u]`, leaving room for the noise so
    /// that scores piled up at the upper bound are separated too.
    pub fn clip(&self, score: f64, bound: f64) -> f64 {
        score.clamp(-bound, (bound - self.u).max(-bound))
    }

    /// Default width for atomic base learners such as trees: `1e-6 * 2A`.
    pub fn for_atomic_scores(bound: f64, seed: u64) -> Self {
        Self {
            u: 1e-6 * 2.0 * bound,
            seed,
            at_prediction: false,
        }
    }
}

/// `clip(score + xi, -A, A)` with `xi ~ U[0, u]`. Draws nothing when `u = 0`.
pub fn dither<R: Rng + ?Sized>(score: f64, cfg: &DitherConfig, bound: f64, rng: &mut R) -> f64 {
    if cfg.u == 0.0 {
        return score;
    }
    let xi = cfg.u * rng.random::<f64>();
    (score + xi).clamp(-bound, bound)
}
