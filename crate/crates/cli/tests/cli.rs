//! Black-box tests of the command-line binary: artifacts, exit codes, flag
//! overrides, and output formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use stream_t1_core::config::{parse_config, RunConfig, Strategy};
use tempfile::TempDir;

/// A fast configuration that still reaches the eviction regime.
const SMALL_CONFIG: &str = "total_chunks = 14\nK = 2\nM = 2\n";

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stream-t1"))
}

fn run_ok(args: &[&str]) -> Output {
    let output = binary().args(args).output().expect("the binary spawns");
    assert!(
        output.status.success(),
        "stream-t1 {args:?} failed\nstdout: {}\nstderr: {}",
        text(&output.stdout),
        text(&output.stderr)
    );
    output
}

fn exit_code(args: &[&str]) -> (i32, String, String) {
    let output = binary().args(args).output().expect("the binary spawns");
    (
        output.status.code().expect("the binary exits normally"),
        text(&output.stdout),
        text(&output.stderr),
    )
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &TempDir, content: &str) -> String {
    let path = dir.path().join("run.conf");
    fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn print_config_shows_the_resolved_defaults() {
    let output = run_ok(&["print-config"]);
    let stdout = text(&output.stdout);
    assert!(stdout.contains("seed = 42\n"));
    assert!(stdout.contains("strategy = stream_t1\n"));
    // The printout itself is a loadable config equal to the defaults.
    let parsed = parse_config(&stdout).unwrap();
    let mut expect = RunConfig::default();
    expect.n_bon = Some(expect.bon_rollouts());
    assert_eq!(parsed, expect);
}

#[test]
fn print_config_applies_flag_overrides() {
    let output = run_ok(&["print-config", "--seed", "9", "--strategy", "greedy"]);
    let parsed = parse_config(&text(&output.stdout)).unwrap();
    assert_eq!(parsed.seed, 9);
    assert_eq!(parsed.strategy, Strategy::Greedy);
}

#[test]
fn run_writes_artifacts_and_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, SMALL_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run_ok(&["run", "--config", &config, "--out", &out.to_string_lossy()]);
        let stdout = text(&output.stdout);
        assert!(stdout.starts_with("strategy\tseed\t"), "summary header missing");
        assert!(stdout.contains("stream_t1\t42\t"));
    }
    let log_a = fs::read(out_a.join("chunk_log.jsonl")).unwrap();
    let log_b = fs::read(out_b.join("chunk_log.jsonl")).unwrap();
    assert!(!log_a.is_empty());
    assert_eq!(log_a, log_b, "reruns must produce identical log bytes");
    let summary_a = fs::read(out_a.join("summary.jsonl")).unwrap();
    let summary_b = fs::read(out_b.join("summary.jsonl")).unwrap();
    assert_eq!(summary_a, summary_b);
}

#[test]
fn strategy_flag_overrides_the_config_file() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, SMALL_CONFIG);
    let out = dir.path().join("out");
    let output = run_ok(&[
        "run",
        "--config",
        &config,
        "--strategy",
        "greedy",
        "--out",
        &out.to_string_lossy(),
    ]);
    let stdout = text(&output.stdout);
    let row = stdout.lines().nth(1).expect("a summary row follows the header");
    assert!(row.starts_with("greedy\t"));
    // Greedy spends one generator call per chunk.
    assert!(row.ends_with("\t14"), "unexpected call count in: {row}");
}

#[test]
fn tsv_format_writes_tabular_logs() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &format!("{SMALL_CONFIG}log_format = tsv\n"));
    let out = dir.path().join("out");
    run_ok(&["run", "--config", &config, "--out", &out.to_string_lossy()]);
    let log = fs::read_to_string(out.join("chunk_log.tsv")).unwrap();
    let header = log.lines().next().unwrap();
    assert!(header.starts_with("chunk_index\tlineage_id\tparent_id\t"));
    assert!(log.lines().count() > 1);
    assert!(!Path::new(&out.join("chunk_log.jsonl")).exists());
}

#[test]
fn unknown_config_key_fails_with_line_number_and_exit_2() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "# comment\nseed = 3\nno_such_key = 1\n");
    let (code, _, stderr) = exit_code(&["run", "--config", &config]);
    assert_eq!(code, 2, "config errors must exit 2 (stderr: {stderr})");
    assert!(stderr.contains("line 3"), "stderr must name the line: {stderr}");
    assert!(stderr.contains("no_such_key"));
}

#[test]
fn missing_config_file_fails_with_exit_2() {
    let (code, _, stderr) = exit_code(&["run", "--config", "/nonexistent/run.conf"]);
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.starts_with("error:"));
}

#[test]
fn invalid_field_combination_fails_with_exit_2() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "alpha = 1.5\n");
    let (code, _, stderr) = exit_code(&["print-config", "--config", &config]);
    assert_eq!(code, 2);
    assert!(stderr.contains("alpha"), "stderr must name the field: {stderr}");
}

#[test]
fn verify_passes_on_a_healthy_build() {
    let output = run_ok(&["verify"]);
    let stdout = text(&output.stdout);
    assert!(stdout.contains("all 7 properties passed"), "stdout: {stdout}");
    for name in [
        "noise_marginal",
        "fusion_piecewise",
        "routing_table",
        "sink_conservation",
        "ema_contraction",
        "prune_matches_oracle",
        "determinism_replay",
    ] {
        assert!(stdout.contains(name), "missing property {name}: {stdout}");
    }
}

#[test]
fn injected_fault_fails_verification_with_exit_3() {
    let (code, stdout, stderr) = exit_code(&["verify", "--inject-alpha", "1.2"]);
    assert_eq!(code, 3, "verification failures must exit 3 (stderr: {stderr})");
    assert!(
        stdout.contains("FAIL ema_contraction"),
        "the failing probe must be named: {stdout}"
    );
    assert!(stderr.contains("1 of 7 properties failed"), "stderr: {stderr}");
}

#[test]
fn compare_prints_the_table_and_the_parity_line() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, SMALL_CONFIG);
    let out = dir.path().join("out");
    let output = run_ok(&[
        "compare",
        "--config",
        &config,
        "--strategies",
        "stream_t1,beam_plain",
        "--seeds",
        "3,4",
        "--out",
        &out.to_string_lossy(),
    ]);
    let stdout = text(&output.stdout);
    let rows: Vec<&str> = stdout.lines().collect();
    assert!(rows[0].starts_with("strategy\tseed\t"));
    // 2 strategies x 2 seeds, then the parity line.
    assert_eq!(rows.len(), 6, "unexpected table shape: {stdout}");
    assert_eq!(
        rows[5], "# budget parity: ok (56 generator calls per scaled run)",
        "14 chunks x 4 candidates per chunk"
    );
    assert!(out.join("compare_summary.jsonl").exists());
}

#[test]
fn bad_strategy_list_fails_with_exit_2() {
    let (code, _, stderr) = exit_code(&["compare", "--strategies", "stream_t1,warp_drive"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("warp_drive"), "stderr: {stderr}");
}
