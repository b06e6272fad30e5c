//! Reward-gated dynamic memory: sliding attention window plus sink anchors.
//!
//! The generator attends over a bounded context assembled from two parts: a
//! small list of *sink* entries that persist for the rest of the run, and a
//! FIFO *window* of the most recently accepted chunks' key/value entries.
//! When an accepted chunk pushes the window past capacity, the oldest entry
//! is evicted and routed by two boolean gates computed from the rewards the
//! evicted chunk earned when it was generated:
//!
//! * `c_quality`: the evicted chunk's short reward exceeds the running mean
//!   of accepted short rewards by more than `tau_short`;
//! * `c_transition`: the previously evicted chunk's long reward dropped by
//!   more than `tau_long` down to the evicted chunk's long reward, which
//!   signals a scene change.
//!
//! Routing: below-average chunks are discarded; above-average chunks inside
//! a scene are folded into the last sink slot by an exponential moving
//! average (a slowly evolving scene summary); above-average chunks at a
//! detected transition are appended as a brand-new sink anchor so the next
//! scene keeps a crisp reference. Two baseline modes exist: `static_sink`
//! freezes the sink at the initially seeded entries and discards every
//! eviction, `naive_window` additionally runs with no sink at all.

use crate::reward::RewardScores;
use ndarray::{concatenate, Array2, Axis};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("attention window must hold at least one entry")]
    ZeroWindow,
    #[error("EMA factor alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("gate thresholds must not be NaN")]
    NanThreshold,
    #[error("short-mean decay must lie in (0, 1), got {0}")]
    InvalidShortMeanDecay(f64),
    #[error(
        "cache entry shape mismatch: expected {expected_tokens}x{expected_key_dim} keys / \
         {expected_tokens}x{expected_value_dim} values, got {found_tokens}x{found_key_dim} / \
         {found_tokens_v}x{found_value_dim}"
    )]
    ShapeMismatch {
        expected_tokens: usize,
        expected_key_dim: usize,
        expected_value_dim: usize,
        found_tokens: usize,
        found_key_dim: usize,
        found_tokens_v: usize,
        found_value_dim: usize,
    },
}

/// Where an evicted window entry goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingDecision {
    /// Dropped entirely.
    Discard,
    /// Folded into the last sink slot by an exponential moving average.
    EmaSink,
    /// Appended to the sink as a new anchor entry.
    AppendSink,
}

/// Cache behavior: the full gated routing or one of the two baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    Dynamic,
    StaticSink,
    NaiveWindow,
}

/// Key/value rows contributed by one generated chunk, one row per chunk
/// token.
#[derive(Debug, Clone, PartialEq)]
pub struct KVEntry {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    pub source_chunk: usize,
}

/// Validated memory parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryParams {
    pub attn_window: usize,
    pub sink_size: usize,
    pub alpha: f64,
    pub tau_short: f64,
    pub tau_long: f64,
    /// `None`: the quality-gate baseline is the arithmetic mean of all
    /// accepted short rewards (the default). `Some(decay)`: an exponential
    /// moving mean with the given decay, which weights recent chunks more.
    pub short_mean_decay: Option<f64>,
}

impl MemoryParams {
    pub fn new(
        attn_window: usize,
        sink_size: usize,
        alpha: f64,
        tau_short: f64,
        tau_long: f64,
    ) -> Result<Self, CacheError> {
        if attn_window == 0 {
            return Err(CacheError::ZeroWindow);
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CacheError::InvalidAlpha(alpha));
        }
        if tau_short.is_nan() || tau_long.is_nan() {
            return Err(CacheError::NanThreshold);
        }
        Ok(Self {
            attn_window,
            sink_size,
            alpha,
            tau_short,
            tau_long,
            short_mean_decay: None,
        })
    }

    /// Switches the quality-gate baseline to an exponential moving mean.
    pub fn with_short_mean_decay(mut self, decay: f64) -> Result<Self, CacheError> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(CacheError::InvalidShortMeanDecay(decay));
        }
        self.short_mean_decay = Some(decay);
        Ok(self)
    }
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            attn_window: 9,
            sink_size: 3,
            alpha: 0.9,
            tau_short: 0.05,
            tau_long: 0.1,
            short_mean_decay: None,
        }
    }
}

/// What happened to the entry evicted by one insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingEvent {
    pub decision: RoutingDecision,
    pub c_quality: bool,
    pub c_transition: bool,
    /// Chunk index of the evicted entry.
    pub evicted_chunk: usize,
}

/// Quality gate: does the evicted chunk's short reward clear the running
/// mean of accepted short rewards by strictly more than `tau_short`?
pub fn quality_gate(s_short: f64, short_mean: f64, tau_short: f64) -> bool {
    s_short - short_mean > tau_short
}

/// Transition gate: did the long reward drop by strictly more than
/// `tau_long` from the previously evicted chunk to this one? `false` when
/// there is no previous chunk yet.
pub fn transition_detector(prev_long: Option<f64>, current_long: f64, tau_long: f64) -> bool {
    match prev_long {
        Some(prev) => prev - current_long > tau_long,
        None => false,
    }
}

/// The routing truth table over the two gates.
pub fn route(c_quality: bool, c_transition: bool) -> RoutingDecision {
    match (c_quality, c_transition) {
        (false, _) => RoutingDecision::Discard,
        (true, false) => RoutingDecision::EmaSink,
        (true, true) => RoutingDecision::AppendSink,
    }
}

/// The per-lineage attention memory: sink anchors plus the sliding window,
/// together with the running reward statistics the gates consume.
///
/// A cache belongs to exactly one beam lineage; beam search clones it with
/// [`SinkCache::fork`] when a survivor spawns children, so sibling branches
/// never share mutable state.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkCache {
    mode: MemoryMode,
    params: MemoryParams,
    /// Accepted chunks seeded here until `seed_target` is reached.
    seed_target: usize,
    seeded: usize,
    sink: Vec<KVEntry>,
    window: VecDeque<(KVEntry, RewardScores)>,
    accepted: u64,
    short_sum: f64,
    /// Exponential moving mean state, tracked when the params ask for it.
    short_ema: Option<f64>,
    prev_long: Option<f64>,
    /// `(tokens, key_dim, value_dim)` of the first inserted entry; later
    /// entries must match.
    entry_shape: Option<(usize, usize, usize)>,
}

impl SinkCache {
    /// A cache with the full gated routing.
    pub fn new(params: MemoryParams) -> Self {
        Self::with_mode(params, MemoryMode::Dynamic)
    }

    /// Baseline: evictions are always discarded and the sink stays frozen at
    /// the initially seeded entries.
    pub fn static_sink_mode(params: MemoryParams) -> Self {
        Self::with_mode(params, MemoryMode::StaticSink)
    }

    /// Baseline: no sink at all, only the sliding window.
    pub fn naive_window_mode(params: MemoryParams) -> Self {
        Self::with_mode(params, MemoryMode::NaiveWindow)
    }

    fn with_mode(params: MemoryParams, mode: MemoryMode) -> Self {
        let seed_target = match mode {
            MemoryMode::NaiveWindow => 0,
            _ => params.sink_size,
        };
        Self {
            mode,
            params,
            seed_target,
            seeded: 0,
            sink: Vec::new(),
            window: VecDeque::new(),
            accepted: 0,
            short_sum: 0.0,
            short_ema: None,
            prev_long: None,
            entry_shape: None,
        }
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    pub fn sink_entries(&self) -> &[KVEntry] {
        &self.sink
    }

    /// Total token rows currently held by the sink (the leading rows of an
    /// assembled context).
    pub fn sink_token_rows(&self) -> usize {
        self.sink.iter().map(|e| e.keys.nrows()).sum()
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Window entries oldest-first, with the scores recorded when each chunk
    /// was accepted.
    pub fn window_entries(&self) -> impl Iterator<Item = &(KVEntry, RewardScores)> {
        self.window.iter()
    }

    /// The quality-gate baseline: by default the running arithmetic mean of
    /// the short rewards of every chunk accepted into this cache so far (0
    /// before the first insertion); an exponential moving mean instead when
    /// the params configure a `short_mean_decay`.
    pub fn short_mean(&self) -> f64 {
        if let Some(ema) = self.short_ema {
            return ema;
        }
        if self.accepted == 0 {
            0.0
        } else {
            self.short_sum / self.accepted as f64
        }
    }

    pub fn accepted_count(&self) -> u64 {
        self.accepted
    }

    pub fn prev_long(&self) -> Option<f64> {
        self.prev_long
    }

    /// An independent copy for a child branch. Mutating either copy leaves
    /// the other untouched.
    pub fn fork(&self) -> Self {
        self.clone()
    }

    fn check_shape(&mut self, entry: &KVEntry) -> Result<(), CacheError> {
        let found = (
            entry.keys.nrows(),
            entry.keys.ncols(),
            entry.values.ncols(),
        );
        let tokens_match = entry.keys.nrows() == entry.values.nrows();
        match self.entry_shape {
            None if tokens_match => {
                self.entry_shape = Some(found);
                Ok(())
            }
            Some(expected) if expected == found && tokens_match => Ok(()),
            _ => {
                let expected = self.entry_shape.unwrap_or(found);
                Err(CacheError::ShapeMismatch {
                    expected_tokens: expected.0,
                    expected_key_dim: expected.1,
                    expected_value_dim: expected.2,
                    found_tokens: entry.keys.nrows(),
                    found_key_dim: entry.keys.ncols(),
                    found_tokens_v: entry.values.nrows(),
                    found_value_dim: entry.values.ncols(),
                })
            }
        }
    }

    /// Inserts the KV entry of a freshly accepted chunk, evicting and
    /// routing the oldest window entry if the window is past capacity.
    ///
    /// Returns `None` while the sink is still seeding or the window has room,
    /// otherwise the routing event for the evicted entry. The first
    /// `sink_size` accepted chunks seed the sink directly (the anchored
    /// opening of the stream); later chunks flow through the window.
    ///
    /// The gate booleans are computed in every mode so that logs stay
    /// comparable across modes; the baselines merely force the decision to
    /// `Discard`.
    pub fn evict_and_route(
        &mut self,
        entry: KVEntry,
        scores: RewardScores,
    ) -> Result<Option<RoutingEvent>, CacheError> {
        self.check_shape(&entry)?;
        // The incoming chunk is accepted as of now: fold its short reward
        // into the running mean before gating the evicted entry, so the mean
        // covers all accepted chunks up to and including the current one.
        self.accepted += 1;
        self.short_sum += scores.short;
        if let Some(decay) = self.params.short_mean_decay {
            self.short_ema = Some(match self.short_ema {
                None => scores.short,
                Some(m) => decay * m + (1.0 - decay) * scores.short,
            });
        }

        if self.seeded < self.seed_target {
            self.sink.push(entry);
            self.seeded += 1;
            return Ok(None);
        }

        self.window.push_back((entry, scores));
        if self.window.len() <= self.params.attn_window {
            return Ok(None);
        }
        let (evicted, ev_scores) = self
            .window
            .pop_front()
            .expect("an over-capacity window cannot be empty");

        let c_quality = quality_gate(ev_scores.short, self.short_mean(), self.params.tau_short);
        let c_transition =
            transition_detector(self.prev_long, ev_scores.long, self.params.tau_long);
        let decision = match self.mode {
            MemoryMode::Dynamic => match route(c_quality, c_transition) {
                // EMA into an empty sink has no slot to update; keep the
                // entry by appending instead.
                RoutingDecision::EmaSink if self.sink.is_empty() => RoutingDecision::AppendSink,
                d => d,
            },
            MemoryMode::StaticSink | MemoryMode::NaiveWindow => RoutingDecision::Discard,
        };

        let evicted_chunk = evicted.source_chunk;
        match decision {
            RoutingDecision::Discard => {}
            RoutingDecision::EmaSink => {
                let alpha = self.params.alpha;
                let last = self
                    .sink
                    .last_mut()
                    .expect("EmaSink is only chosen when the sink is non-empty");
                last.keys = &last.keys * alpha + &evicted.keys * (1.0 - alpha);
                last.values = &last.values * alpha + &evicted.values * (1.0 - alpha);
                last.source_chunk = evicted.source_chunk;
            }
            RoutingDecision::AppendSink => self.sink.push(evicted),
        }
        self.prev_long = Some(ev_scores.long);
        Ok(Some(RoutingEvent {
            decision,
            c_quality,
            c_transition,
            evicted_chunk,
        }))
    }

    /// The attention context in order: sink entries first, then window
    /// entries oldest-first. Returns stacked `(keys, values)` matrices, with
    /// zero rows when the cache is empty.
    pub fn assemble_context(&self) -> (Array2<f64>, Array2<f64>) {
        let entries: Vec<&KVEntry> = self
            .sink
            .iter()
            .chain(self.window.iter().map(|(e, _)| e))
            .collect();
        if entries.is_empty() {
            return (Array2::zeros((0, 0)), Array2::zeros((0, 0)));
        }
        let keys: Vec<_> = entries.iter().map(|e| e.keys.view()).collect();
        let values: Vec<_> = entries.iter().map(|e| e.values.view()).collect();
        (
            concatenate(Axis(0), &keys).expect("cache entries share one key shape"),
            concatenate(Axis(0), &values).expect("cache entries share one value shape"),
        )
    }
}
