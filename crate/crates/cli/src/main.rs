//! Command-line harness: run streams, compare strategies, self-verify.
//!
//! Exit codes: `0` success, `1` runtime failure, `2` configuration or usage
//! error, `3` verification failure. Set `STREAM_T1_LOG_LEVEL` (e.g. `info`,
//! `debug`) to see progress logging on stderr.

use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use stream_t1_core::config::{load_config, ConfigError, LogFormat, RunConfig, Strategy};
use stream_t1_core::report::{
    write_records_jsonl, write_records_tsv, write_summaries_jsonl, write_summaries_tsv, SummaryRow,
};
use stream_t1_core::scheduler::{run_with_config, EngineError};
use stream_t1_core::verify::{run_suite, VerifyOptions};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "stream-t1",
    version,
    about = "Chunk-level test-time scaling for streaming latent generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured stream and write its log and summary.
    Run(ConfigArgs),
    /// Run a grid of strategies and seeds, print the summary table.
    Compare(CompareArgs),
    /// Run the self-check property suite.
    Verify(VerifyArgs),
    /// Print the fully resolved configuration.
    PrintConfig(ConfigArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to a `key = value` config file (defaults apply without one).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the strategy (stream_t1, greedy, beam_plain, best_of_n).
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    base: ConfigArgs,
    /// Comma-separated strategies to run (default: all four).
    #[arg(long)]
    strategies: Option<String>,
    /// Comma-separated seeds to run (default: the configured seed).
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed of the randomized probes.
    #[arg(long)]
    seed: Option<u64>,
    /// Fault injection: run the EMA contraction probe with this retention
    /// factor. Values outside (0, 1) must make the suite fail.
    #[arg(long, hide = true)]
    inject_alpha: Option<f64>,
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn runtime(message: String) -> Self {
        Self {
            message,
            code: EXIT_RUNTIME,
        }
    }

    fn config(message: String) -> Self {
        Self {
            message,
            code: EXIT_CONFIG,
        }
    }

    fn verification(message: String) -> Self {
        Self {
            message,
            code: EXIT_VERIFY,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            // Configuration-class failures keep the config exit code even
            // when they surface while assembling the engine.
            EngineError::Config(_)
            | EngineError::Script(_)
            | EngineError::ScriptTooShort { .. }
            | EngineError::DimMismatch { .. } => CliError::config(e.to_string()),
            other => CliError::runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("STREAM_T1_LOG_LEVEL")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::PrintConfig(args) => cmd_print_config(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Loads the config file (or defaults) and applies the flag overrides.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(strategy) = args.strategy {
        config.strategy = strategy;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn write_log_file(
    path: &Path,
    format: LogFormat,
    records: &[stream_t1_core::ChunkLogRecord],
) -> Result<(), CliError> {
    let mut writer = BufWriter::new(File::create(path)?);
    match format {
        LogFormat::Jsonl => write_records_jsonl(&mut writer, records)?,
        LogFormat::Tsv => write_records_tsv(&mut writer, records)?,
    }
    writer.flush()?;
    Ok(())
}

fn write_summary_file(
    path: &Path,
    format: LogFormat,
    rows: &[SummaryRow],
) -> Result<(), CliError> {
    let mut writer = BufWriter::new(File::create(path)?);
    match format {
        LogFormat::Jsonl => write_summaries_jsonl(&mut writer, rows)?,
        LogFormat::Tsv => write_summaries_tsv(&mut writer, rows)?,
    }
    writer.flush()?;
    Ok(())
}

fn cmd_run(args: &ConfigArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    log::info!(
        "running {} for {} chunks (seed {})",
        config.strategy,
        config.total_chunks,
        config.seed
    );
    let result = run_with_config(&config)?;
    std::fs::create_dir_all(&config.output_dir)?;
    let ext = config.log_format.extension();
    let log_path = config.output_dir.join(format!("chunk_log.{ext}"));
    let summary_path = config.output_dir.join(format!("summary.{ext}"));
    write_log_file(&log_path, config.log_format, &result.log)?;
    write_summary_file(&summary_path, config.log_format, &[result.summary.clone()])?;
    log::info!(
        "wrote {} records to {} and the summary to {}",
        result.log.len(),
        log_path.display(),
        summary_path.display()
    );
    let mut stdout = std::io::stdout().lock();
    write_summaries_tsv(&mut stdout, &[result.summary])?;
    Ok(())
}

fn parse_strategies(arg: &Option<String>) -> Result<Vec<Strategy>, CliError> {
    match arg {
        None => Ok(Strategy::ALL.to_vec()),
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<Strategy>().map_err(CliError::config))
            .collect(),
    }
}

fn parse_seeds(arg: &Option<String>, fallback: u64) -> Result<Vec<u64>, CliError> {
    match arg {
        None => Ok(vec![fallback]),
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| CliError::config(format!("bad seed '{}': {e}", s.trim())))
            })
            .collect(),
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let base = resolve_config(&args.base)?;
    let strategies = parse_strategies(&args.strategies)?;
    let seeds = parse_seeds(&args.seeds, base.seed)?;
    let mut rows = Vec::new();
    for &seed in &seeds {
        for &strategy in &strategies {
            let mut config = base.clone();
            config.seed = seed;
            config.strategy = strategy;
            log::info!("comparing {strategy} at seed {seed}");
            let result = run_with_config(&config)?;
            rows.push(result.summary);
        }
    }
    let mut stdout = std::io::stdout().lock();
    write_summaries_tsv(&mut stdout, &rows)?;

    // The comparison is only fair if every scaled strategy spent the same
    // generator budget; greedy is the unscaled reference and exempt.
    let scaled: Vec<&SummaryRow> = rows
        .iter()
        .filter(|r| r.strategy != Strategy::Greedy.as_str())
        .collect();
    let budgets: Vec<u64> = scaled.iter().map(|r| r.generator_calls).collect();
    if let (Some(min), Some(max)) = (budgets.iter().min(), budgets.iter().max()) {
        if min != max {
            return Err(CliError::runtime(format!(
                "budget parity violated among scaled strategies: generator calls range from \
                 {min} to {max}"
            )));
        }
        writeln!(stdout, "# budget parity: ok ({min} generator calls per scaled run)")
            .map_err(CliError::from)?;
    }
    std::fs::create_dir_all(&base.output_dir)?;
    let summary_path = base
        .output_dir
        .join(format!("compare_summary.{}", base.log_format.extension()));
    write_summary_file(&summary_path, base.log_format, &rows)?;
    log::info!("wrote the comparison table to {}", summary_path.display());
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let mut options = VerifyOptions::default();
    if let Some(seed) = args.seed {
        options.seed = seed;
    }
    if let Some(alpha) = args.inject_alpha {
        options.alpha = alpha;
    }
    let reports = run_suite(&options);
    let mut failed = 0usize;
    for report in &reports {
        let verdict = if report.passed { "ok  " } else { "FAIL" };
        println!("{verdict} {} — {}", report.name, report.details);
        if !report.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(CliError::verification(format!(
            "{failed} of {} properties failed",
            reports.len()
        )))
    } else {
        println!("all {} properties passed", reports.len());
        Ok(())
    }
}

fn cmd_print_config(args: &ConfigArgs) -> Result<(), CliError> {
    let config = resolve_config(args)?;
    print!("{}", config.serialize());
    Ok(())
}
