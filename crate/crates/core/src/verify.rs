//! Runtime self-checks: fast property probes over the core invariants,
//! runnable from the CLI (`verify`) on any installed build.
//!
//! Each probe is deliberately small (the exhaustive versions live in the
//! test suite) and reports a pass/fail verdict with measured numbers, so a
//! broken build fails loudly with a diagnostic naming the violated
//! property. [`VerifyOptions::alpha`] exists so a fault can be injected
//! deliberately: running with an alpha outside `(0, 1)` must make the EMA
//! contraction probe fail, which demonstrates the suite can actually catch
//! violations.

use crate::config::RunConfig;
use crate::noise::{initial_noise, propagate_noise, PropagationParams};
use crate::report::write_records_jsonl;
use crate::reward::{fuse, FusionParams, RewardScores};
use crate::rng::split_rng;
use crate::scheduler::{replay_trajectory, run_with_config, select_top};
use crate::sink::{route, KVEntry, MemoryParams, RoutingDecision, SinkCache};
use ndarray::Array2;

/// Verdict of one property probe.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl PropertyReport {
    fn new(name: &'static str, passed: bool, details: String) -> Self {
        Self {
            name,
            passed,
            details,
        }
    }
}

/// Knobs of the verification suite.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// EMA retention exercised by the contraction probe. The default passes;
    /// values at or above 1 (or at or below 0) must fail the probe.
    pub alpha: f64,
    /// Root seed of the randomized probes.
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            seed: 42,
        }
    }
}

/// Runs every probe and returns all verdicts (never panics on failure —
/// callers decide how to surface the reports).
pub fn run_suite(options: &VerifyOptions) -> Vec<PropertyReport> {
    vec![
        noise_marginal_probe(options),
        fusion_piecewise_probe(),
        routing_table_probe(),
        sink_conservation_probe(options),
        ema_contraction_probe(options),
        prune_oracle_probe(),
        determinism_replay_probe(),
    ]
}

/// Propagated noise must stay standard normal per entry and correlate with
/// its parent by exactly beta.
fn noise_marginal_probe(options: &VerifyOptions) -> PropertyReport {
    let mut worst = String::new();
    let mut passed = true;
    for (case, beta) in [0.3f64, 0.8].into_iter().enumerate() {
        let params = PropagationParams::new(beta).expect("probe betas are valid");
        let (mut sum, mut sum_sq, mut sum_cross, mut count) = (0.0, 0.0, 0.0, 0u64);
        for draw in 0..2000usize {
            let mut rng = split_rng(options.seed, draw, case);
            let prev = initial_noise(&mut rng, (4, 8));
            let next = propagate_noise(&prev, params, &mut rng);
            for (a, b) in prev.values.iter().zip(next.values.iter()) {
                sum += b;
                sum_sq += b * b;
                sum_cross += a * b;
                count += 1;
            }
        }
        let n = count as f64;
        let mean = sum / n;
        let var = sum_sq / n - mean * mean;
        let corr = sum_cross / n / var.sqrt();
        let ok = mean.abs() < 0.03 && (0.95..=1.05).contains(&var) && (corr - beta).abs() < 0.03;
        passed &= ok;
        worst.push_str(&format!(
            "beta={beta}: mean={mean:.4} var={var:.4} corr={corr:.4}; "
        ));
    }
    PropertyReport::new("noise_marginal", passed, worst.trim_end().to_string())
}

/// The fused score must follow the ramp-then-cap piecewise rule exactly.
fn fusion_piecewise_probe() -> PropertyReport {
    let mut max_err = 0.0f64;
    for total in [4usize, 40] {
        for tau in [0.25, 0.75] {
            let params = FusionParams::new(tau, total).expect("probe params are valid");
            for n in 0..total {
                let (short, long) = (0.8, 0.3);
                let ratio = n as f64 / total as f64;
                let w = if ratio <= tau { ratio } else { tau };
                let expect = w * short + (1.0 - w) * long;
                max_err = max_err.max((fuse(short, long, n, &params) - expect).abs());
            }
        }
    }
    PropertyReport::new(
        "fusion_piecewise",
        max_err <= 1e-12,
        format!("max deviation from the piecewise form: {max_err:.2e}"),
    )
}

/// The two gate booleans must map onto decisions exactly as documented.
fn routing_table_probe() -> PropertyReport {
    let expect = [
        (false, false, RoutingDecision::Discard),
        (false, true, RoutingDecision::Discard),
        (true, false, RoutingDecision::EmaSink),
        (true, true, RoutingDecision::AppendSink),
    ];
    let mut failures = Vec::new();
    for (q, t, want) in expect {
        let got = route(q, t);
        if got != want {
            failures.push(format!("route({q}, {t}) = {got:?}, want {want:?}"));
        }
    }
    PropertyReport::new(
        "routing_table",
        failures.is_empty(),
        if failures.is_empty() {
            "all four gate combinations map to the documented decision".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn tiny_entry(chunk: usize, fill: f64) -> KVEntry {
    KVEntry {
        keys: Array2::from_elem((1, 1), fill),
        values: Array2::from_elem((1, 1), fill),
        source_chunk: chunk,
    }
}

/// Random eviction sequences must conserve the sink/window bookkeeping:
/// sink length equals seeded slots plus appends, the window never exceeds
/// its capacity, and a discard leaves the sink untouched.
fn sink_conservation_probe(options: &VerifyOptions) -> PropertyReport {
    let mut checked = 0u64;
    for sequence in 0..50usize {
        let params = MemoryParams::new(3, 2, 0.9, 0.05, 0.1).expect("probe params are valid");
        let mut cache = SinkCache::new(params);
        let mut appends = 0usize;
        let mut rng = split_rng(options.seed, sequence, 3);
        for step in 0..30usize {
            // Logistic squashes the normal draw into (0, 1).
            let short = 1.0 / (1.0 + (-rng.standard_normal()).exp());
            let long = 1.0 / (1.0 + (-rng.standard_normal()).exp());
            let scores = RewardScores {
                chunk_index: step,
                short,
                long,
                fused: 0.5 * (short + long),
            };
            let before: Vec<KVEntry> = cache.sink_entries().to_vec();
            let event = cache
                .evict_and_route(tiny_entry(step, step as f64), scores)
                .expect("probe entries share one shape");
            if let Some(e) = event {
                match e.decision {
                    RoutingDecision::AppendSink => appends += 1,
                    RoutingDecision::Discard => {
                        if cache.sink_entries() != before.as_slice() {
                            return PropertyReport::new(
                                "sink_conservation",
                                false,
                                format!("discard at step {step} of sequence {sequence} mutated the sink"),
                            );
                        }
                    }
                    RoutingDecision::EmaSink => {}
                }
            }
            // The sink fills one slot per accepted chunk until seeding
            // completes; afterwards it only grows by appends.
            let seeded = (step + 1).min(params.sink_size);
            if cache.sink_entries().len() != seeded + appends {
                return PropertyReport::new(
                    "sink_conservation",
                    false,
                    format!(
                        "sequence {sequence} step {step}: sink length {} != {seeded} seeded + {appends} appends",
                        cache.sink_entries().len(),
                    ),
                );
            }
            if cache.window_len() > params.attn_window {
                return PropertyReport::new(
                    "sink_conservation",
                    false,
                    format!(
                        "sequence {sequence} step {step}: window length {} exceeds capacity {}",
                        cache.window_len(),
                        params.attn_window
                    ),
                );
            }
            checked += 1;
        }
    }
    PropertyReport::new(
        "sink_conservation",
        true,
        format!("{checked} insertions conserved sink and window bookkeeping"),
    )
}

/// Folding a constant value into an EMA slot must contract the error by
/// exactly `alpha` per update. This is the probe that the `--inject-alpha`
/// fault targets: a retention at or above 1 stops being a contraction.
fn ema_contraction_probe(options: &VerifyOptions) -> PropertyReport {
    let alpha = options.alpha;
    let target = 2.0;
    let mut slot = 10.0f64;
    let initial_error = (slot - target).abs();
    let steps = 50u32;
    for _ in 0..steps {
        slot = alpha * slot + (1.0 - alpha) * target;
    }
    let final_error = (slot - target).abs();
    let expected = initial_error * alpha.abs().powi(steps as i32);
    let contracted = final_error < initial_error;
    let exact = if expected == 0.0 {
        final_error == 0.0
    } else {
        ((final_error - expected) / expected).abs() < 1e-9
    };
    PropertyReport::new(
        "ema_contraction",
        contracted && exact,
        if contracted {
            format!(
                "error shrank from {initial_error:.3} to {final_error:.3e} over {steps} updates \
                 (alpha = {alpha})"
            )
        } else {
            format!(
                "EMA update is not a contraction at alpha = {alpha}: error went from \
                 {initial_error:.3} to {final_error:.3e} over {steps} updates"
            )
        },
    )
}

/// Beam pruning must agree with an exhaustive sort, including on duplicate
/// rank keys.
fn prune_oracle_probe() -> PropertyReport {
    for case in 0..100usize {
        let size = case % 37 + 1;
        let pool: Vec<(f64, u64, usize)> = (0..size)
            .map(|j| {
                // Coarse quantization forces plenty of duplicate keys.
                let key = ((case * 31 + j * 17) % 5) as f64 / 4.0;
                ((key * 10.0).round() / 10.0, (j % 4) as u64, j)
            })
            .collect();
        let k = case % (size + 1);
        // Independent oracle: full decorated sort, take the prefix.
        let mut decorated: Vec<(usize, (f64, u64, usize))> =
            pool.iter().cloned().enumerate().collect();
        decorated.sort_by(|(_, a), (_, b)| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let expect: Vec<usize> = decorated.iter().take(k).map(|(i, _)| *i).collect();
        let got = select_top(&pool, k);
        if got != expect {
            return PropertyReport::new(
                "prune_matches_oracle",
                false,
                format!("case {case}: selected {got:?}, oracle says {expect:?}"),
            );
        }
    }
    PropertyReport::new(
        "prune_matches_oracle",
        true,
        "100 pools with duplicate keys matched the exhaustive sort".to_string(),
    )
}

/// The same config must produce byte-identical logs twice, and replaying
/// the winner trajectory must reproduce it exactly.
fn determinism_replay_probe() -> PropertyReport {
    let config = RunConfig {
        total_chunks: 8,
        beam_width: 2,
        expansion: 2,
        ..RunConfig::default()
    };
    let first = match run_with_config(&config) {
        Ok(r) => r,
        Err(e) => {
            return PropertyReport::new("determinism_replay", false, format!("run failed: {e}"))
        }
    };
    let second = run_with_config(&config).expect("a config that ran once runs again");
    let mut bytes_a = Vec::new();
    let mut bytes_b = Vec::new();
    write_records_jsonl(&mut bytes_a, &first.log).expect("writing to memory cannot fail");
    write_records_jsonl(&mut bytes_b, &second.log).expect("writing to memory cannot fail");
    if bytes_a != bytes_b {
        return PropertyReport::new(
            "determinism_replay",
            false,
            "two identical runs produced different log bytes".to_string(),
        );
    }
    match replay_trajectory(&config, &first.trajectory.records) {
        Ok(replayed) if replayed == first.trajectory => PropertyReport::new(
            "determinism_replay",
            true,
            format!(
                "two runs of {} records were byte-identical and the winner replayed exactly",
                first.log.len()
            ),
        ),
        Ok(_) => PropertyReport::new(
            "determinism_replay",
            false,
            "replay diverged from the recorded winner trajectory".to_string(),
        ),
        Err(e) => PropertyReport::new("determinism_replay", false, format!("replay failed: {e}")),
    }
}
