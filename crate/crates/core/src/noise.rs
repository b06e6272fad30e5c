//! Spherical noise propagation across chunks.
//!
//! Each chunk is denoised from an initial Gaussian latent. Instead of drawing
//! that latent independently per chunk, a child chunk interpolates between
//! its parent's initial noise and a fresh draw on the sphere of standard
//! normals:
//!
//! ```text
//! x_n = beta * x_{n-1} + sqrt(1 - beta^2) * eps,   eps ~ N(0, I)
//! ```
//!
//! Because the mixture weights are a unit vector, the marginal of `x_n` is
//! exactly standard normal for every `beta` in `(-1, 1)` — propagation biases
//! *which* noise a chunk starts from without biasing the noise distribution
//! itself. `beta = 0` recovers independent per-chunk noise.

use crate::rng::{sample_gaussian, RngStream};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("propagation weight beta must satisfy |beta| < 1, got {0}")]
    InvalidBeta(f64),
}

/// The initial Gaussian latent a chunk is denoised from, tagged with the
/// chunk's position in the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseChunk {
    pub values: Array2<f64>,
    pub chunk_index: usize,
}

/// Validated propagation parameters. `|beta| < 1` keeps the fresh-noise
/// weight `sqrt(1 - beta^2)` real and the chain mixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    beta: f64,
}

impl PropagationParams {
    pub fn new(beta: f64) -> Result<Self, NoiseError> {
        if !beta.is_finite() || beta.abs() >= 1.0 {
            return Err(NoiseError::InvalidBeta(beta));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Fresh standard normal noise for the first chunk of a lineage.
pub fn initial_noise(rng: &mut RngStream, shape: (usize, usize)) -> NoiseChunk {
    NoiseChunk {
        values: sample_gaussian(rng, shape),
        chunk_index: 0,
    }
}

/// Propagates a parent's initial noise to its child chunk: spherical
/// interpolation with a fresh draw, advancing the chunk index by one.
pub fn propagate_noise(
    prev: &NoiseChunk,
    params: PropagationParams,
    rng: &mut RngStream,
) -> NoiseChunk {
    let beta = params.beta();
    let fresh_weight = (1.0 - beta * beta).sqrt();
    let eps = sample_gaussian(rng, prev.values.dim());
    NoiseChunk {
        values: &prev.values * beta + &eps * fresh_weight,
        chunk_index: prev.chunk_index + 1,
    }
}
