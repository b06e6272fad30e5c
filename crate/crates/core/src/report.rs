//! Run artifacts: per-chunk log records and per-run summary rows, with
//! byte-stable JSONL and TSV encodings.
//!
//! One [`ChunkLogRecord`] is emitted for every beam survivor at every chunk
//! step, so a run with beam width `K` over `N` chunks logs `K * N` records.
//! Field order in the JSON encoding matches struct declaration order, and
//! floats are rendered in shortest round-trip form, so identical runs
//! produce identical bytes — the property the determinism checks rely on.

use crate::sink::{RoutingDecision, RoutingEvent};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Write};

/// What the memory did at a step, including the no-eviction case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingLabel {
    /// Nothing was evicted (sink still seeding or window below capacity).
    None,
    Discard,
    EmaSink,
    AppendSink,
}

impl RoutingLabel {
    pub fn from_event(event: Option<&RoutingEvent>) -> Self {
        match event.map(|e| e.decision) {
            None => RoutingLabel::None,
            Some(RoutingDecision::Discard) => RoutingLabel::Discard,
            Some(RoutingDecision::EmaSink) => RoutingLabel::EmaSink,
            Some(RoutingDecision::AppendSink) => RoutingLabel::AppendSink,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RoutingLabel::None => "none",
            RoutingLabel::Discard => "discard",
            RoutingLabel::EmaSink => "ema_sink",
            RoutingLabel::AppendSink => "append_sink",
        }
    }
}

impl fmt::Display for RoutingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One surviving candidate at one chunk step. Do not reorder fields: the
/// declaration order is the serialized column/key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkLogRecord {
    pub chunk_index: usize,
    /// Unique id of this surviving candidate.
    pub lineage_id: u64,
    /// `lineage_id` of the parent survivor (0 for first-chunk roots).
    pub parent_id: u64,
    pub s_short: f64,
    pub s_long: f64,
    pub s_final: f64,
    pub routing_decision: RoutingLabel,
    pub c_quality: bool,
    pub c_transition: bool,
    /// `root_seed/chunk/candidate` address of the RNG stream that produced
    /// this candidate's noise and renoise draws.
    pub noise_seed_path: String,
    /// Total generator invocations across the whole run when this step
    /// finished.
    pub generator_calls_so_far: u64,
}

const RECORD_HEADER: [&str; 11] = [
    "chunk_index",
    "lineage_id",
    "parent_id",
    "s_short",
    "s_long",
    "s_final",
    "routing_decision",
    "c_quality",
    "c_transition",
    "noise_seed_path",
    "generator_calls_so_far",
];

/// End-of-run digest of the winning lineage plus whole-log routing counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub seed: u64,
    /// The winner's accumulated fused reward.
    pub cumulative_final: f64,
    /// Mean short reward over the winner lineage's chunks.
    pub mean_short: f64,
    /// Mean long reward over the winner lineage's chunks.
    pub mean_long: f64,
    /// Routing counts over the full log (all survivors, all steps).
    pub appends: u64,
    pub ema_updates: u64,
    pub discards: u64,
    pub generator_calls: u64,
}

const SUMMARY_HEADER: [&str; 9] = [
    "strategy",
    "seed",
    "cumulative_final",
    "mean_short",
    "mean_long",
    "appends",
    "ema_updates",
    "discards",
    "generator_calls",
];

/// Writes one JSON object per line, in record order.
pub fn write_records_jsonl<W: Write>(w: &mut W, records: &[ChunkLogRecord]) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *w, record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes a header line followed by one tab-separated row per record.
pub fn write_records_tsv<W: Write>(w: &mut W, records: &[ChunkLogRecord]) -> io::Result<()> {
    writeln!(w, "{}", RECORD_HEADER.join("\t"))?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.chunk_index,
            r.lineage_id,
            r.parent_id,
            r.s_short,
            r.s_long,
            r.s_final,
            r.routing_decision,
            r.c_quality,
            r.c_transition,
            r.noise_seed_path,
            r.generator_calls_so_far,
        )?;
    }
    Ok(())
}

pub fn write_summaries_jsonl<W: Write>(w: &mut W, rows: &[SummaryRow]) -> io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *w, row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_summaries_tsv<W: Write>(w: &mut W, rows: &[SummaryRow]) -> io::Result<()> {
    writeln!(w, "{}", SUMMARY_HEADER.join("\t"))?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.strategy,
            r.seed,
            r.cumulative_final,
            r.mean_short,
            r.mean_long,
            r.appends,
            r.ema_updates,
            r.discards,
            r.generator_calls,
        )?;
    }
    Ok(())
}

/// Parses records back from their JSONL encoding (used by replay tooling).
pub fn read_records_jsonl(text: &str) -> Result<Vec<ChunkLogRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> ChunkLogRecord {
        ChunkLogRecord {
            chunk_index: 12,
            lineage_id: 47,
            parent_id: 43,
            s_short: 0.5,
            s_long: 0.625,
            s_final: 0.5625,
            routing_decision: RoutingLabel::EmaSink,
            c_quality: true,
            c_transition: false,
            noise_seed_path: "42/12/5".to_string(),
            generator_calls_so_far: 208,
        }
    }

    #[test]
    fn jsonl_preserves_declared_field_order() {
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &[sample_record()]).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line,
            "{\"chunk_index\":12,\"lineage_id\":47,\"parent_id\":43,\
             \"s_short\":0.5,\"s_long\":0.625,\"s_final\":0.5625,\
             \"routing_decision\":\"ema_sink\",\"c_quality\":true,\
             \"c_transition\":false,\"noise_seed_path\":\"42/12/5\",\
             \"generator_calls_so_far\":208}\n"
        );
    }

    #[test]
    fn jsonl_round_trips() {
        let records = vec![sample_record()];
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &records).unwrap();
        let parsed = read_records_jsonl(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn tsv_has_header_and_matching_columns() {
        let mut buf = Vec::new();
        write_records_tsv(&mut buf, &[sample_record()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        let row = lines.next().unwrap();
        assert_eq!(header.split('\t').count(), RECORD_HEADER.len());
        assert_eq!(row.split('\t').count(), RECORD_HEADER.len());
        assert!(header.starts_with("chunk_index\tlineage_id"));
        assert!(row.contains("ema_sink"));
        assert!(row.contains("42/12/5"));
    }

    #[test]
    fn routing_labels_serialize_to_snake_case() {
        for (label, expect) in [
            (RoutingLabel::None, "\"none\""),
            (RoutingLabel::Discard, "\"discard\""),
            (RoutingLabel::EmaSink, "\"ema_sink\""),
            (RoutingLabel::AppendSink, "\"append_sink\""),
        ] {
            assert_eq!(serde_json::to_string(&label).unwrap(), expect);
            assert_eq!(format!("\"{label}\""), expect);
        }
    }

    #[test]
    fn summary_encodings_match() {
        let row = SummaryRow {
            strategy: "stream_t1".to_string(),
            seed: 42,
            cumulative_final: 21.125,
            mean_short: 0.5,
            mean_long: 0.55,
            appends: 2,
            ema_updates: 17,
            discards: 93,
            generator_calls: 640,
        };
        let mut json = Vec::new();
        write_summaries_jsonl(&mut json, &[row.clone()]).unwrap();
        let line = String::from_utf8(json).unwrap();
        assert!(line.starts_with("{\"strategy\":\"stream_t1\",\"seed\":42,"));
        let mut tsv = Vec::new();
        write_summaries_tsv(&mut tsv, &[row]).unwrap();
        let text = String::from_utf8(tsv).unwrap();
        assert!(text.starts_with("strategy\tseed\t"));
        assert!(text.contains("stream_t1\t42\t21.125\t"));
    }

    #[test]
    fn identical_records_encode_to_identical_bytes() {
        let records = vec![sample_record(), sample_record()];
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_records_jsonl(&mut a, &records).unwrap();
        write_records_jsonl(&mut b, &records).unwrap();
        assert_eq!(a, b);
        let lines: Vec<&str> = std::str::from_utf8(&a).unwrap().lines().collect();
        assert_eq!(lines[0], lines[1]);
    }
}
