//! Deterministic toy denoiser for desk-scale experiments.
//!
//! The generator turns one chunk of initial Gaussian noise into one chunk of
//! latent frames with a few predict/renoise steps. Its single attention
//! layer reads the assembled sink-plus-window context, so output quality
//! genuinely depends on what the memory holds, and its blend schedule keeps
//! the initial latent influential in the final frames, so propagated noise
//! genuinely carries across chunks. Everything is seeded: identical inputs
//! and RNG streams produce bit-identical chunks.
//!
//! Per frame `x` at denoise level `j` (T at the noisiest, 1 at the last):
//!
//! ```text
//! u      = x + prompt * W_p                         (conditioned input)
//! attn   = softmax(u W_q * (ctx K)^T + bias) ctx V  (zero without context rows)
//! a      = attn * W_o                               (retrieved content, latent space)
//! gate   = logistic(GAIN * <a, prompt> / |prompt|)
//! pull   = attractor_pull * gate
//! guide  = pull * prompt + (1 - pull) * a
//! x0_hat = retain(j) * ((1-rho) * x + rho * chunk_mean(x)) + (1 - retain(j)) * guide
//! ```
//!
//! `bias` adds a logit bonus to sink rows, reproducing the anchor-heavy
//! attention pattern of streaming transformers: sink entries absorb a large
//! share of attention mass regardless of content, which is exactly why the
//! *quality* of what the sink holds matters downstream. The bonus scales
//! inversely with the level index — noisy early estimates attend mostly to
//! the fresh window, and anchor dominance peaks at the final clean-up.
//!
//! with `retain(j) = j / (j + 1)`: the correction toward the guide grows as
//! the noise level falls, which preserves the chunk's initial large-scale
//! structure — the property chunk-to-chunk noise propagation exploits. The
//! chunk-mean coupling `rho` makes frames within a chunk cohere.
//!
//! Weight construction ties the projections so the attention is informative
//! rather than arbitrary: the key projection equals the query projection
//! (content-addressable scores: similar latents attend to each other) and
//! the output projection is the transpose of the value projection, scaled so
//! the encode/decode round trip has unit spectral norm. The round trip is
//! therefore a positive-semidefinite map — context aligned with the prompt
//! always raises the agreement gate — that neither amplifies content (the
//! map is non-expanding) nor collapses it (a raw unit-Frobenius round trip
//! would shrink energy by roughly the attention width).

use crate::latent::{LatentChunk, PromptEmbedding};
use crate::noise::NoiseChunk;
use crate::rng::{sample_gaussian, RngStream};
use crate::sink::{KVEntry, SinkCache};
use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

/// Sharpness of the attention softmax (multiplies the `1/sqrt(d_attn)`
/// scaled logits).
const ATTN_LOGIT_GAIN: f64 = 32.0;
/// Logit bonus for sink rows at the final denoise level. Anchors hold a
/// disproportionate share of attention, so their content quality strongly
/// shapes the retrieval; the bonus is divided by the level index, so noisy
/// early levels attend mostly to the fresh window (queries are still
/// noise-dominated) while the final clean-up attends anchor-heavily.
const SINK_LOGIT_BIAS: f64 = 3.5;
/// Sensitivity of the pull gate to context/prompt agreement.
const AGREEMENT_GAIN: f64 = 5.0;
/// Within-chunk coupling toward the chunk mean, applied at every level.
const FRAME_COUPLING: f64 = 0.35;
/// Identity share of the prompt-mixing matrix; the remainder is random.
/// Keeping an identity component makes conditioned queries resemble on-
/// prompt content, which is what lets attention retrieve the right entries.
const PROMPT_MIX_IDENTITY: f64 = 0.6;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("noise schedule must contain at least one level")]
    EmptySchedule,
    #[error("noise schedule must be strictly decreasing, got {0:?}")]
    NonMonotoneSchedule(Vec<f64>),
    #[error("noise schedule must end at exactly 0, got {0}")]
    LastSigmaNonZero(f64),
    #[error("noise schedule contains a non-finite or negative level")]
    InvalidSigma,
    #[error("latent and attention dimensions must be at least 1")]
    ZeroDim,
    #[error("attractor pull strength must lie in [0, 1], got {0}")]
    PullOutOfRange(f64),
    #[error("generated chunk {0} contains non-finite values")]
    NonFiniteOutput(usize),
}

/// The renoise targets of a run, highest first and ending at exactly zero.
///
/// A schedule of length `T` drives `T` predict steps; after the step at
/// level `j` the estimate is renoised to level `j - 1`, and level 0 is the
/// clean output (no renoise).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    targets: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(targets: Vec<f64>) -> Result<Self, GeneratorError> {
        if targets.is_empty() {
            return Err(GeneratorError::EmptySchedule);
        }
        if targets.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(GeneratorError::InvalidSigma);
        }
        if targets.windows(2).any(|w| w[1] >= w[0]) {
            return Err(GeneratorError::NonMonotoneSchedule(targets));
        }
        let last = *targets.last().unwrap();
        if last != 0.0 {
            return Err(GeneratorError::LastSigmaNonZero(last));
        }
        Ok(Self { targets })
    }

    /// The default 4-step schedule `(1.0, 0.6, 0.3, 0.0)`.
    pub fn default_schedule() -> Self {
        Self::new(vec![1.0, 0.6, 0.3, 0.0]).expect("the default schedule is valid")
    }

    /// Number of denoise steps `T`.
    pub fn steps(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Noise level `sigma_j` for `j` in `0..T` (`sigma_0 = 0`).
    pub fn sigma(&self, level: usize) -> f64 {
        assert!(level < self.steps(), "level {level} outside schedule");
        self.targets[self.steps() - 1 - level]
    }
}

/// The toy denoiser's parameters; see the module docs for how the
/// projections are tied together.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserWeights {
    query: Array2<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    output: Array2<f64>,
    prompt_mix: Array2<f64>,
    attractor_pull: f64,
}

fn unit_frobenius(mut m: Array2<f64>) -> Array2<f64> {
    let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        m.mapv_inplace(|v| v / norm);
    }
    m
}

/// Largest singular value of `m`, via deterministic power iteration on
/// `m mᵀ`. Used to normalise the encode/decode round trip so retrieval
/// neither vanishes nor amplifies.
fn spectral_norm(m: &Array2<f64>) -> f64 {
    let gram = m.dot(&m.t());
    let n = gram.nrows();
    let mut v = Array1::from_elem(n, (n as f64).sqrt().recip());
    for _ in 0..64 {
        let next = gram.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm <= f64::EPSILON {
            return 0.0;
        }
        v = next / norm;
    }
    v.dot(&gram.dot(&v)).sqrt()
}

impl DenoiserWeights {
    /// Deterministically generates weights from a seed. Draw order: query
    /// projection, value projection, prompt mixer; the key projection is the
    /// query projection and the output projection is the transposed value
    /// projection normalised so the value/output round trip has unit
    /// spectral norm.
    pub fn generate(
        weights_seed: u64,
        latent_dim: usize,
        attn_dim: usize,
        attractor_pull: f64,
    ) -> Result<Self, GeneratorError> {
        if latent_dim == 0 || attn_dim == 0 {
            return Err(GeneratorError::ZeroDim);
        }
        if !(0.0..=1.0).contains(&attractor_pull) {
            return Err(GeneratorError::PullOutOfRange(attractor_pull));
        }
        let mut rng = RngStream::for_weights(weights_seed);
        let query = unit_frobenius(rng.gaussian_matrix(latent_dim, attn_dim));
        let value = unit_frobenius(rng.gaussian_matrix(latent_dim, attn_dim));
        // Scale the decode so the value/output round trip has unit spectral
        // norm: retrieval keeps the scale of the latents it came from while
        // the whole map stays non-expanding. See the module docs.
        let round_trip_gain = spectral_norm(&value);
        let output = value.t().to_owned() / (round_trip_gain * round_trip_gain);
        let random_mix = unit_frobenius(rng.gaussian_matrix(latent_dim, latent_dim));
        let prompt_mix =
            Array2::eye(latent_dim) * PROMPT_MIX_IDENTITY + random_mix * (1.0 - PROMPT_MIX_IDENTITY);
        Ok(Self {
            key: query.clone(),
            query,
            value,
            output,
            prompt_mix,
            attractor_pull,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.query.nrows()
    }

    pub fn attn_dim(&self) -> usize {
        self.query.ncols()
    }

    pub fn attractor_pull(&self) -> f64 {
        self.attractor_pull
    }

    /// Projects a generated chunk matrix into its cache entry rows.
    pub fn project_kv(&self, chunk: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        (chunk.dot(&self.key), chunk.dot(&self.value))
    }
}

/// Assembled attention input: sink rows first, then window rows in FIFO
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionContext {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    /// How many leading rows are sink anchors (they receive the sink
    /// attention bias).
    pub sink_rows: usize,
}

impl AttentionContext {
    pub fn from_cache(cache: &SinkCache) -> Self {
        let (keys, values) = cache.assemble_context();
        Self {
            keys,
            values,
            sink_rows: cache.sink_token_rows(),
        }
    }

    /// A context with no rows at all (cold start).
    pub fn empty() -> Self {
        Self {
            keys: Array2::zeros((0, 0)),
            values: Array2::zeros((0, 0)),
            sink_rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.keys.nrows()
    }
}

/// The self-retention blend at a denoise level: high while the state is
/// noisy, lower as the guide takes over near the clean end.
fn retain(level: usize) -> f64 {
    level as f64 / (level as f64 + 1.0)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}

/// One denoise step: estimates the clean chunk from the state `x_t` at
/// `level_index` (which must be at least 1), attending over the context
/// rows. With zero context rows the attention term is zero and the estimate
/// reduces to the documented self-term
/// `retain * mix(x) + (1 - retain) * (attractor_pull / 2) * prompt`.
pub fn predict_clean(
    x_t: &Array2<f64>,
    level_index: usize,
    context: &AttentionContext,
    prompt: &PromptEmbedding,
    weights: &DenoiserWeights,
) -> Array2<f64> {
    assert!(level_index >= 1, "predict_clean runs at levels T..1");
    debug_assert_eq!(context.keys.nrows(), context.values.nrows());
    debug_assert!(context.sink_rows <= context.rows());
    let d = weights.latent_dim();
    debug_assert_eq!(x_t.ncols(), d);
    debug_assert_eq!(prompt.dim(), d);

    let p = &prompt.values;
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let prompt_mixed = p.dot(&weights.prompt_mix);
    let chunk_mean = x_t
        .mean_axis(Axis(0))
        .expect("chunks contain at least one frame");
    let w_level = retain(level_index);
    let logit_scale = ATTN_LOGIT_GAIN / (weights.attn_dim() as f64).sqrt();
    let sink_bonus = SINK_LOGIT_BIAS / level_index as f64;

    let mut out = Array2::zeros(x_t.raw_dim());
    for (f, x_f) in x_t.rows().into_iter().enumerate() {
        let u = &x_f.to_owned() + &prompt_mixed;
        let retrieved: Array1<f64> = if context.rows() > 0 {
            let q = u.dot(&weights.query);
            let mut logits = context.keys.dot(&q) * logit_scale;
            for r in 0..context.sink_rows {
                logits[r] += sink_bonus;
            }
            let attn_weights = softmax(&logits);
            let pooled = context.values.t().dot(&attn_weights);
            pooled.dot(&weights.output)
        } else {
            Array1::zeros(d)
        };
        let agreement = retrieved.dot(p) / p_norm;
        let pull = weights.attractor_pull * logistic(AGREEMENT_GAIN * agreement);
        let guide = p * pull + &retrieved * (1.0 - pull);
        let mixed = &x_f.to_owned() * (1.0 - FRAME_COUPLING) + &chunk_mean * FRAME_COUPLING;
        let estimate = mixed * w_level + guide * (1.0 - w_level);
        out.row_mut(f).assign(&estimate);
    }
    out
}

/// Renoises a clean estimate to `level_index`: `x = x0_hat + sigma * eps`.
/// Level 0 is exact identity.
pub fn renoise(
    x0_hat: &Array2<f64>,
    eps: &Array2<f64>,
    level_index: usize,
    schedule: &NoiseSchedule,
) -> Array2<f64> {
    let sigma = schedule.sigma(level_index);
    if sigma == 0.0 {
        return x0_hat.clone();
    }
    x0_hat + &(eps * sigma)
}

/// A generated chunk together with the cache entry it would contribute.
#[derive(Debug, Clone)]
pub struct GeneratedChunk {
    pub chunk: LatentChunk,
    pub kv: KVEntry,
}

/// Denoises one chunk from its initial noise: `T` predict steps with
/// renoising in between, attending over the cache's current context. The
/// resulting cache entry is returned but *not* inserted — insertion is the
/// scheduler's job once the chunk survives pruning.
pub fn generate_chunk(
    noise: &NoiseChunk,
    cache: &SinkCache,
    prompt: &PromptEmbedding,
    weights: &DenoiserWeights,
    schedule: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<GeneratedChunk, GeneratorError> {
    let context = AttentionContext::from_cache(cache);
    let steps = schedule.steps();
    let mut x = noise.values.clone();
    for level in (1..=steps).rev() {
        let x0 = predict_clean(&x, level, &context, prompt, weights);
        x = if level > 1 {
            let eps = sample_gaussian(rng, x0.dim());
            renoise(&x0, &eps, level - 1, schedule)
        } else {
            x0
        };
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(GeneratorError::NonFiniteOutput(noise.chunk_index));
    }
    let (keys, values) = weights.project_kv(&x);
    Ok(GeneratedChunk {
        chunk: LatentChunk::from_matrix(&x, noise.chunk_index),
        kv: KVEntry {
            keys,
            values,
            source_chunk: noise.chunk_index,
        },
    })
}
