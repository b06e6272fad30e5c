//! Reward models and the long-short fusion rule used for pruning.
//!
//! Two reward channels score every candidate chunk:
//!
//! * the **short** reward averages a per-frame score (prompt fidelity) over
//!   the chunk's frames, and
//! * the **long** reward scores the trailing window of accepted chunks plus
//!   the candidate (temporal consistency).
//!
//! Early in a stream the long channel is the more reliable signal; as the
//! stream grows the short channel gains weight up to a cap `tau`:
//!
//! ```text
//! r = n / N                       (position ratio of chunk n out of N)
//! fused = r * short + (1 - r) * long        if r <= tau
//! fused = tau * short + (1 - tau) * long    otherwise
//! ```
//!
//! Both branches agree at `r = tau`, so the fused score is continuous in the
//! chunk position. The module also ships the synthetic oracles used by the
//! test harness: attractor proximity for the short channel and step
//! smoothness with a scene-boundary penalty for the long channel.

use crate::latent::{LatentChunk, LatentFrame, PromptEmbedding, SceneScript};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("long reward needs a non-empty history")]
    EmptyHistory,
    #[error("reward window must be at least 1")]
    ZeroWindow,
    #[error("fusion cap tau must lie in (0, 1], got {0}")]
    InvalidTau(f64),
    #[error("total chunk count must be at least 1")]
    ZeroTotalChunks,
    #[error("boundary penalty must lie in (0, 1), got {0}")]
    InvalidPenalty(f64),
}

/// The scores attached to one candidate chunk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScores {
    pub chunk_index: usize,
    pub short: f64,
    pub long: f64,
    pub fused: f64,
}

/// Validated fusion parameters: the short-weight cap `tau` in `(0, 1]` and
/// the planned stream length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    tau: f64,
    total_chunks: usize,
}

impl FusionParams {
    pub fn new(tau: f64, total_chunks: usize) -> Result<Self, RewardError> {
        if !tau.is_finite() || tau <= 0.0 || tau > 1.0 {
            return Err(RewardError::InvalidTau(tau));
        }
        if total_chunks == 0 {
            return Err(RewardError::ZeroTotalChunks);
        }
        Ok(Self { tau, total_chunks })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn total_chunks(&self) -> usize {
        self.total_chunks
    }
}

/// Scores a single frame against its prompt.
pub trait ShortRewardModel: Send + Sync {
    fn score_frame(&self, frame: &LatentFrame, prompt: &PromptEmbedding) -> f64;
}

/// Scores a window of consecutive chunks against their prompt.
pub trait LongRewardModel: Send + Sync {
    fn score_window(&self, window: &[LatentChunk], prompt: &PromptEmbedding) -> f64;
}

/// Short reward of a chunk: the mean frame score.
pub fn short_score(
    chunk: &LatentChunk,
    prompt: &PromptEmbedding,
    model: &dyn ShortRewardModel,
) -> f64 {
    let frames = chunk.frames();
    let sum: f64 = frames.iter().map(|f| model.score_frame(f, prompt)).sum();
    sum / frames.len() as f64
}

/// Long reward of the newest chunk in `history`: scores the last
/// `min(window, history.len())` chunks as one window.
pub fn long_score(
    history: &[LatentChunk],
    window: usize,
    prompt: &PromptEmbedding,
    model: &dyn LongRewardModel,
) -> Result<f64, RewardError> {
    if history.is_empty() {
        return Err(RewardError::EmptyHistory);
    }
    if window == 0 {
        return Err(RewardError::ZeroWindow);
    }
    let start = history.len().saturating_sub(window);
    Ok(model.score_window(&history[start..], prompt))
}

/// Fuses the two reward channels for the chunk at `chunk_index`; see the
/// module docs for the piecewise rule.
pub fn fuse(short: f64, long: f64, chunk_index: usize, params: &FusionParams) -> f64 {
    let ratio = chunk_index as f64 / params.total_chunks as f64;
    let weight = if ratio <= params.tau { ratio } else { params.tau };
    weight * short + (1.0 - weight) * long
}

/// Short-channel oracle: proximity to the attractor of the frame's scene
/// segment, `1 / (1 + distance)`.
///
/// Range `(0, 1]` with the maximum exactly on the attractor. The segment is
/// recovered from the prompt (prompts are constant and distinct per
/// segment), since a frame alone does not identify its position in the
/// stream.
pub struct AttractorProximityReward {
    script: Arc<SceneScript>,
}

impl ShortRewardModel for AttractorProximityReward {
    fn score_frame(&self, frame: &LatentFrame, prompt: &PromptEmbedding) -> f64 {
        let segment = self.script.segment_by_prompt(prompt);
        1.0 / (1.0 + frame.distance_to(&segment.attractor))
    }
}

/// Long-channel oracle: smoothness of the frame trajectory across the
/// window, `exp(-mean squared frame-to-frame step)`, multiplied by a fixed
/// penalty when the window straddles a scene boundary.
///
/// A constant trajectory scores the maximum `1.0`; growing frame-to-frame
/// jitter strictly lowers the score. The boundary penalty makes the long
/// channel drop sharply on the first window that mixes two scenes, which is
/// what the transition detector listens for.
pub struct StepSmoothnessReward {
    script: Arc<SceneScript>,
    penalty: f64,
}

impl StepSmoothnessReward {
    pub fn penalty(&self) -> f64 {
        self.penalty
    }
}

impl LongRewardModel for StepSmoothnessReward {
    fn score_window(&self, window: &[LatentChunk], _prompt: &PromptEmbedding) -> f64 {
        if window.is_empty() {
            return 0.0;
        }
        // Mean squared step over all consecutive frame pairs, including
        // pairs that cross chunk boundaries.
        let mut steps = 0usize;
        let mut total = 0.0;
        let mut prev: Option<&LatentFrame> = None;
        for chunk in window {
            for frame in chunk.frames() {
                if let Some(p) = prev {
                    let d2: f64 = p
                        .values
                        .iter()
                        .zip(frame.values.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    total += d2;
                    steps += 1;
                }
                prev = Some(frame);
            }
        }
        let mean_sq_step = if steps == 0 { 0.0 } else { total / steps as f64 };
        let mut score = (-mean_sq_step).exp();

        let first_seg = self.script.segment_for(window[0].chunk_index()).start_chunk;
        let straddles = window
            .iter()
            .any(|c| self.script.segment_for(c.chunk_index()).start_chunk != first_seg);
        if straddles {
            score *= self.penalty;
        }
        score
    }
}

/// Builds the attractor-proximity short oracle for a script.
pub fn synthetic_short_oracle(script: Arc<SceneScript>) -> AttractorProximityReward {
    AttractorProximityReward { script }
}

/// Builds the step-smoothness long oracle for a script. `penalty` is the
/// multiplicative factor applied to windows that straddle a scene boundary
/// and must lie in `(0, 1)`.
pub fn synthetic_long_oracle(
    script: Arc<SceneScript>,
    penalty: f64,
) -> Result<StepSmoothnessReward, RewardError> {
    if !penalty.is_finite() || penalty <= 0.0 || penalty >= 1.0 {
        return Err(RewardError::InvalidPenalty(penalty));
    }
    Ok(StepSmoothnessReward { script, penalty })
}
