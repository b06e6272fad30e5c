//! Run configuration: defaults, the line-oriented config file format, and
//! validation.
//!
//! Config files are plain `key = value` lines. `#` starts a comment that
//! runs to end of line, blank lines are skipped, and whitespace around keys
//! and values is ignored. Unknown keys and duplicate keys are hard errors
//! (with line numbers) rather than silent no-ops, so a typo cannot quietly
//! run the defaults. Threshold values accept `inf` and `-inf`, which
//! effectively disable a gate.

use crate::sink::MemoryMode;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

/// Which generation strategy a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Full pipeline: propagated noise, beam pruning, dynamic memory.
    StreamT1,
    /// Single lineage, fresh noise, static sink.
    Greedy,
    /// Beam pruning only: fresh noise, static sink.
    BeamPlain,
    /// Independent greedy rollouts; keep the best finished stream.
    BestOfN,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::StreamT1 => "stream_t1",
            Strategy::Greedy => "greedy",
            Strategy::BeamPlain => "beam_plain",
            Strategy::BestOfN => "best_of_n",
        }
    }

    pub const ALL: [Strategy; 4] = [
        Strategy::StreamT1,
        Strategy::Greedy,
        Strategy::BeamPlain,
        Strategy::BestOfN,
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stream_t1" => Ok(Strategy::StreamT1),
            "greedy" => Ok(Strategy::Greedy),
            "beam_plain" => Ok(Strategy::BeamPlain),
            "best_of_n" => Ok(Strategy::BestOfN),
            other => Err(format!(
                "unknown strategy '{other}' (expected stream_t1, greedy, beam_plain or best_of_n)"
            )),
        }
    }
}

/// Which score ranks candidates during pruning. The cumulative total is
/// always the standard fusion regardless of this mode, so runs stay
/// comparable across modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Standard,
    LongOnly,
}

impl FusionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::Standard => "standard",
            FusionMode::LongOnly => "long_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(FusionMode::Standard),
            "long_only" => Ok(FusionMode::LongOnly),
            other => Err(format!(
                "unknown fusion mode '{other}' (expected standard or long_only)"
            )),
        }
    }
}

/// On-disk encoding of the per-chunk log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Jsonl,
    Tsv,
}

impl LogFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            LogFormat::Jsonl => "jsonl",
            LogFormat::Tsv => "tsv",
        }
    }

    /// File extension for the chunk log.
    pub fn extension(&self) -> &'static str {
        self.as_str()
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(LogFormat::Jsonl),
            "tsv" => Ok(LogFormat::Tsv),
            other => Err(format!("unknown log format '{other}' (expected jsonl or tsv)")),
        }
    }
}

fn memory_mode_from_str(s: &str) -> Result<MemoryMode, String> {
    match s {
        "dynamic" => Ok(MemoryMode::Dynamic),
        "static_sink" => Ok(MemoryMode::StaticSink),
        "naive_window" => Ok(MemoryMode::NaiveWindow),
        other => Err(format!(
            "unknown memory mode '{other}' (expected dynamic, static_sink or naive_window)"
        )),
    }
}

pub fn memory_mode_as_str(mode: MemoryMode) -> &'static str {
    match mode {
        MemoryMode::Dynamic => "dynamic",
        MemoryMode::StaticSink => "static_sink",
        MemoryMode::NaiveWindow => "naive_window",
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected 'key = value', got '{text}'")]
    MissingEquals { line: usize, text: String },
    #[error("config line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("config line {line}: bad value for '{key}': {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Every knob of a run, with defaults matching the reference setup.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root RNG seed for the whole run.
    pub seed: u64,
    /// Stream length `N` in chunks.
    pub total_chunks: usize,
    /// Beam width `K` (config key `K`).
    pub beam_width: usize,
    /// Children expanded per survivor `M` (config key `M`).
    pub expansion: usize,
    /// Rollout count for `best_of_n`; defaults to `K * M` when unset.
    pub n_bon: Option<usize>,
    pub strategy: Strategy,
    /// Noise carry-over coefficient, in `(-1, 1)`.
    pub beta: f64,
    /// Fusion crossover point, in `(0, 1]`.
    pub tau: f64,
    /// Chunks scored by the long-horizon channel.
    pub reward_window: usize,
    /// Boundary-straddle penalty of the long oracle (key `oracle.penalty`).
    pub oracle_penalty: f64,
    pub fusion_mode: FusionMode,
    /// Sliding-window capacity of the attention memory, in chunks.
    pub attn_window: usize,
    /// Number of seeded sink slots.
    pub sink_size: usize,
    /// EMA retention for sink merges, in `(0, 1)`.
    pub alpha: f64,
    /// Quality-gate margin (may be `inf` / `-inf`).
    pub tau_short: f64,
    /// Transition-gate drop threshold (may be `inf` / `-inf`).
    pub tau_long: f64,
    /// Unset: the quality-gate baseline is the arithmetic mean of accepted
    /// short rewards. Set (in `(0, 1)`): an exponential moving mean with
    /// this decay.
    pub short_mean_decay: Option<f64>,
    pub memory_mode: MemoryMode,
    /// Denoise steps per chunk; must equal the schedule length.
    pub denoise_steps: usize,
    /// Renoise targets, highest first, ending at 0.
    pub sigma_schedule: Vec<f64>,
    /// Seed for the toy denoiser's weights.
    pub weights_seed: u64,
    /// Attractor pull strength of the denoiser, in `[0, 1]`.
    pub attractor_pull: f64,
    pub latent_dim: usize,
    pub frames_per_chunk: usize,
    /// Scene script path; empty/unset uses the built-in script.
    pub scene_script: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub log_format: LogFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            total_chunks: 40,
            beam_width: 4,
            expansion: 4,
            n_bon: None,
            strategy: Strategy::StreamT1,
            beta: 0.5,
            tau: 0.5,
            reward_window: 10,
            oracle_penalty: 0.5,
            fusion_mode: FusionMode::Standard,
            attn_window: 9,
            sink_size: 3,
            alpha: 0.9,
            tau_short: 0.05,
            tau_long: 0.1,
            short_mean_decay: None,
            memory_mode: MemoryMode::Dynamic,
            denoise_steps: 4,
            sigma_schedule: vec![1.0, 0.6, 0.3, 0.0],
            weights_seed: 7,
            attractor_pull: 0.9,
            latent_dim: 8,
            frames_per_chunk: 4,
            scene_script: None,
            output_dir: PathBuf::from("out"),
            log_format: LogFormat::Jsonl,
        }
    }
}

impl RunConfig {
    /// Effective rollout count for `best_of_n`.
    pub fn bon_rollouts(&self) -> usize {
        self.n_bon.unwrap_or(self.beam_width * self.expansion)
    }

    /// Checks cross-field consistency and ranges. Parsing calls this
    /// automatically; call it directly after mutating a config in code.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.total_chunks == 0 {
            return fail("total_chunks must be at least 1".into());
        }
        if self.beam_width == 0 || self.expansion == 0 {
            return fail("K and M must be at least 1".into());
        }
        if self.n_bon == Some(0) {
            return fail("n_bon must be at least 1".into());
        }
        if !self.beta.is_finite() || self.beta.abs() >= 1.0 {
            return fail(format!("beta must lie in (-1, 1), got {}", self.beta));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau > 1.0 {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.reward_window == 0 {
            return fail("reward_window must be at least 1".into());
        }
        if !self.oracle_penalty.is_finite()
            || self.oracle_penalty <= 0.0
            || self.oracle_penalty >= 1.0
        {
            return fail(format!(
                "oracle.penalty must lie in (0, 1), got {}",
                self.oracle_penalty
            ));
        }
        if self.attn_window == 0 {
            return fail("attn_window must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.tau_short.is_nan() || self.tau_long.is_nan() {
            return fail("tau_short and tau_long must not be NaN".into());
        }
        if let Some(decay) = self.short_mean_decay {
            if !(decay > 0.0 && decay < 1.0) {
                return fail(format!("short_mean_decay must lie in (0, 1), got {decay}"));
            }
        }
        if self.denoise_steps == 0 {
            return fail("denoise_steps must be at least 1".into());
        }
        if self.denoise_steps != self.sigma_schedule.len() {
            return fail(format!(
                "denoise_steps ({}) must equal the sigma_schedule length ({})",
                self.denoise_steps,
                self.sigma_schedule.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.attractor_pull) {
            return fail(format!(
                "attractor_pull must lie in [0, 1], got {}",
                self.attractor_pull
            ));
        }
        if self.latent_dim == 0 || self.frames_per_chunk == 0 {
            return fail("latent_dim and frames_per_chunk must be at least 1".into());
        }
        if self.latent_dim != 8 && self.scene_script.is_none() {
            return fail(format!(
                "latent_dim {} requires an explicit scene_script whose vectors match",
                self.latent_dim
            ));
        }
        Ok(())
    }

    /// Renders the config in the parseable file format, every key explicit.
    pub fn serialize(&self) -> String {
        let schedule = self
            .sigma_schedule
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("seed", self.seed.to_string());
        line("total_chunks", self.total_chunks.to_string());
        line("K", self.beam_width.to_string());
        line("M", self.expansion.to_string());
        line("n_bon", self.bon_rollouts().to_string());
        line("strategy", self.strategy.to_string());
        line("beta", self.beta.to_string());
        line("tau", self.tau.to_string());
        line("reward_window", self.reward_window.to_string());
        line("oracle.penalty", self.oracle_penalty.to_string());
        line("fusion_mode", self.fusion_mode.to_string());
        line("attn_window", self.attn_window.to_string());
        line("sink_size", self.sink_size.to_string());
        line("alpha", self.alpha.to_string());
        line("tau_short", self.tau_short.to_string());
        line("tau_long", self.tau_long.to_string());
        line(
            "short_mean_decay",
            self.short_mean_decay
                .map(|d| d.to_string())
                .unwrap_or_default(),
        );
        line("memory_mode", memory_mode_as_str(self.memory_mode).to_string());
        line("denoise_steps", self.denoise_steps.to_string());
        line("sigma_schedule", schedule);
        line("weights_seed", self.weights_seed.to_string());
        line("attractor_pull", self.attractor_pull.to_string());
        line("latent_dim", self.latent_dim.to_string());
        line("frames_per_chunk", self.frames_per_chunk.to_string());
        line(
            "scene_script",
            self.scene_script
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        line("output_dir", self.output_dir.display().to_string());
        line("log_format", self.log_format.to_string());
        out
    }
}

fn parse_scalar<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        line,
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn parse_float(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    let parsed: f64 = parse_scalar(line, key, value)?;
    if parsed.is_nan() {
        return Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            message: "NaN is not a valid value".to_string(),
        });
    }
    Ok(parsed)
}

/// Parses config text into a full [`RunConfig`] (defaults fill the gaps)
/// and validates it.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::MissingEquals {
                line: line_no,
                text: content.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(ConfigError::DuplicateKey {
                line: line_no,
                key: key.to_string(),
            });
        }
        seen.push(key.to_string());
        let bad = |message: String| ConfigError::BadValue {
            line: line_no,
            key: key.to_string(),
            message,
        };
        match key {
            "seed" => config.seed = parse_scalar(line_no, key, value)?,
            "total_chunks" => config.total_chunks = parse_scalar(line_no, key, value)?,
            "K" => config.beam_width = parse_scalar(line_no, key, value)?,
            "M" => config.expansion = parse_scalar(line_no, key, value)?,
            "n_bon" => config.n_bon = Some(parse_scalar(line_no, key, value)?),
            "strategy" => config.strategy = value.parse().map_err(bad)?,
            "beta" => config.beta = parse_float(line_no, key, value)?,
            "tau" => config.tau = parse_float(line_no, key, value)?,
            "reward_window" => config.reward_window = parse_scalar(line_no, key, value)?,
            "oracle.penalty" => config.oracle_penalty = parse_float(line_no, key, value)?,
            "fusion_mode" => config.fusion_mode = value.parse().map_err(bad)?,
            "attn_window" => config.attn_window = parse_scalar(line_no, key, value)?,
            "sink_size" => config.sink_size = parse_scalar(line_no, key, value)?,
            "alpha" => config.alpha = parse_float(line_no, key, value)?,
            "tau_short" => config.tau_short = parse_float(line_no, key, value)?,
            "tau_long" => config.tau_long = parse_float(line_no, key, value)?,
            "short_mean_decay" => {
                config.short_mean_decay = if value.is_empty() {
                    None
                } else {
                    Some(parse_float(line_no, key, value)?)
                };
            }
            "memory_mode" => config.memory_mode = memory_mode_from_str(value).map_err(bad)?,
            "denoise_steps" => config.denoise_steps = parse_scalar(line_no, key, value)?,
            "sigma_schedule" => {
                config.sigma_schedule = value
                    .split(',')
                    .map(|part| parse_float(line_no, key, part.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "weights_seed" => config.weights_seed = parse_scalar(line_no, key, value)?,
            "attractor_pull" => config.attractor_pull = parse_float(line_no, key, value)?,
            "latent_dim" => config.latent_dim = parse_scalar(line_no, key, value)?,
            "frames_per_chunk" => config.frames_per_chunk = parse_scalar(line_no, key, value)?,
            "scene_script" => {
                config.scene_script = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                };
            }
            "output_dir" => config.output_dir = PathBuf::from(value),
            "log_format" => config.log_format = value.parse().map_err(bad)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                });
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Reads and parses a config file.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.total_chunks, 40);
        assert_eq!(config.beam_width, 4);
        assert_eq!(config.expansion, 4);
        assert_eq!(config.bon_rollouts(), 16);
        assert_eq!(config.sigma_schedule, vec![1.0, 0.6, 0.3, 0.0]);
    }

    #[test]
    fn parses_the_documented_format() {
        let text = "\
# reference run, tweaked
seed = 7        # inline comment
K = 2
M=3
beta =  0.25
strategy = beam_plain
sigma_schedule = 1.0, 0.5, 0.0
denoise_steps = 3
tau_short = inf
tau_long = -inf
scene_script =
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.beam_width, 2);
        assert_eq!(config.expansion, 3);
        assert_eq!(config.beta, 0.25);
        assert_eq!(config.strategy, Strategy::BeamPlain);
        assert_eq!(config.sigma_schedule, vec![1.0, 0.5, 0.0]);
        assert_eq!(config.tau_short, f64::INFINITY);
        assert_eq!(config.tau_long, f64::NEG_INFINITY);
        assert_eq!(config.scene_script, None);
        // Untouched keys keep their defaults.
        assert_eq!(config.total_chunks, 40);
        assert_eq!(config.alpha, 0.9);
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let err = parse_config("seed = 1\nbogus_key = 2\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 2);
                assert_eq!(key, "bogus_key");
            }
            other => panic!("expected UnknownKey, got {other}"),
        }
    }

    #[test]
    fn duplicate_key_reports_line_number() {
        let err = parse_config("seed = 1\n# fine\nseed = 2\n").unwrap_err();
        match err {
            ConfigError::DuplicateKey { line, key } => {
                assert_eq!(line, 3);
                assert_eq!(key, "seed");
            }
            other => panic!("expected DuplicateKey, got {other}"),
        }
    }

    #[test]
    fn malformed_line_and_values_are_rejected() {
        assert!(matches!(
            parse_config("just words\n"),
            Err(ConfigError::MissingEquals { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("seed = notanumber\n"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("tau_short = nan\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            parse_config("strategy = yolo\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn cross_field_validation_catches_inconsistencies() {
        assert!(matches!(
            parse_config("denoise_steps = 3\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_config("beta = 1.0\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_config("alpha = 0\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_config("latent_dim = 6\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_config("oracle.penalty = 1.0\n"),
            Err(ConfigError::Invalid(_))
        ));
        // A schedule change is fine when the step count moves with it.
        parse_config("denoise_steps = 2\nsigma_schedule = 0.5, 0.0\n").unwrap();
    }

    #[test]
    fn short_mean_decay_is_optional_and_range_checked() {
        let config = parse_config("short_mean_decay = 0.75\n").unwrap();
        assert_eq!(config.short_mean_decay, Some(0.75));
        // An empty value means the arithmetic-mean default.
        let config = parse_config("short_mean_decay =\n").unwrap();
        assert_eq!(config.short_mean_decay, None);
        assert!(matches!(
            parse_config("short_mean_decay = 1.0\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_config("short_mean_decay = 0\n"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn serialize_round_trips_through_the_parser() {
        let mut config = RunConfig::default();
        config.seed = 99;
        config.tau_short = f64::INFINITY;
        config.strategy = Strategy::BestOfN;
        config.short_mean_decay = Some(0.25);
        config.scene_script = Some(PathBuf::from("data/default_scene.scene"));
        let text = config.serialize();
        let reparsed = parse_config(&text).unwrap();
        // n_bon serializes as its effective value.
        assert_eq!(reparsed.n_bon, Some(16));
        let mut expect = config.clone();
        expect.n_bon = Some(16);
        assert_eq!(reparsed, expect);
    }

    #[test]
    fn infinity_serializes_parseably() {
        assert_eq!(f64::INFINITY.to_string(), "inf");
        assert_eq!("inf".parse::<f64>().unwrap(), f64::INFINITY);
        assert_eq!("-inf".parse::<f64>().unwrap(), f64::NEG_INFINITY);
    }
}
