use serde::{Deserialize, Serialize};

use crate::autodiff::Reduction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: usize,
    pub queries_per_shape: usize,
    pub surface_points_per_shape: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-4,
            iterations: 5000,
            queries_per_shape: 1024,
            surface_points_per_shape: 3000,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.queries_per_shape == 0 || self.surface_points_per_shape == 0 {
            return Err(Error::Config("pretraining counts must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("pretraining lr must be positive, got {}", self.lr)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Which parameters test-time optimization updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMode {
    Full,
    /// Decoder frozen; only the encoder and hourglass adapt.
    EncoderOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SAOptConfig {
    pub iterations: usize,
    /// Query sets per iteration; all share one encoding of the cloud.
    pub batch: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub n_surface: usize,
    pub n_nonsurface: usize,
    pub mode: OptMode,
    /// Sum instead of mean over the query points.
    pub sum_loss: bool,
    pub seed: u64,
}

impl Default for SAOptConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch: 16,
            lr0: 3e-5,
            decay: 0.3,
            decay_every: 400,
            n_surface: 512,
            n_nonsurface: 1536,
            mode: OptMode::Full,
            sum_loss: false,
            seed: 0,
        }
    }
}

impl SAOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_surface + self.n_nonsurface == 0 || self.batch == 0 {
            return Err(Error::Config("test-time optimization needs at least one query point".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        Ok(())
    }

    /// Staircase schedule `lr0 * decay^floor(i / decay_every)`.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        let k = (iteration / self.decay_every) as i32;
        self.lr0 * self.decay.powi(k)
    }

    pub fn reduction(&self) -> Reduction {
        if self.sum_loss {
            Reduction::Sum
        } else {
            Reduction::Mean
        }
    }
}

/// One optimizer step of a loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}
