//! Chunk-level test-time scaling for streaming latent generation.
//!
//! The engine generates a long latent "video" as a sequence of short chunks,
//! each denoised in a few steps by a deterministic toy model, and spends extra
//! compute at inference time to pick better chunks as the stream unfolds.
//! Three mechanisms cooperate:
//!
//! * **Propagated noise** ([`noise`]): each candidate chunk starts from a
//!   spherical interpolation between its parent's initial noise and a fresh
//!   Gaussian draw, so good noise neighborhoods persist across chunks while
//!   the marginal distribution stays exactly standard normal.
//! * **Long-short reward pruning** ([`reward`], [`scheduler`]): every
//!   candidate is scored by a per-frame prompt-fidelity reward and a temporal
//!   smoothness reward over a trailing window of chunks; a position-dependent
//!   fusion of the two ranks candidates during beam pruning.
//! * **Reward-gated memory sinking** ([`sink`]): entries evicted from the
//!   sliding attention window are either discarded, folded into the last
//!   sink slot by an exponential moving average, or appended as a new sink
//!   anchor, depending on quality and scene-transition gates driven by the
//!   same rewards.
//!
//! Everything is seeded and reproducible: per-candidate RNG streams are
//! derived from `(root seed, chunk index, candidate index)`, runs are
//! byte-identical across repeats, and a logged run can be replayed from its
//! records alone. The [`generator`] module supplies the deterministic toy
//! denoiser and [`reward`] the synthetic oracles used by the test and
//! verification suites.

pub mod config;
pub mod generator;
pub mod latent;
pub mod noise;
pub mod report;
pub mod reward;
pub mod rng;
pub mod scheduler;
pub mod sink;
pub mod verify;

pub use config::{parse_config, ConfigError, FusionMode, LogFormat, RunConfig, Strategy};
pub use generator::{
    generate_chunk, predict_clean, renoise, AttentionContext, DenoiserWeights, NoiseSchedule,
};
pub use latent::{LatentChunk, LatentFrame, PromptEmbedding, SceneScript, SceneSegment};
pub use noise::{initial_noise, propagate_noise, NoiseChunk, PropagationParams};
pub use report::{ChunkLogRecord, RoutingLabel, SummaryRow};
pub use reward::{
    fuse, long_score, short_score, synthetic_long_oracle, synthetic_short_oracle, FusionParams,
    LongRewardModel, RewardScores, ShortRewardModel,
};
pub use rng::{sample_gaussian, split_rng, RngStream};
pub use scheduler::{
    effective_config, replay_trajectory, run_with_config, select_top, BeamCandidate, BeamState,
    Engine, EngineError, RunResult, Trajectory,
};
pub use sink::{
    quality_gate, route, transition_detector, KVEntry, MemoryMode, MemoryParams, RoutingDecision,
    RoutingEvent, SinkCache,
};
pub use verify::{run_suite, PropertyReport, VerifyOptions};
