//! JSONL episode traces: a header object, then one object per step.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::episode::{EpisodeRecord, TraceStep};

pub const TRACE_SCHEMA: &str = "hipbi-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    /// Names of the per-step fields, in order.
    pub fields: Vec<String>,
    pub env: String,
    pub controller: String,
    pub mode: String,
    /// How asynchrony was simulated, e.g. `latency_steps=10`.
    pub timing: String,
    pub seed: u64,
    pub suc: bool,
    pub safe: bool,
    pub l2d: f64,
    pub ts: usize,
    pub arena: [f64; 2],
}

impl TraceHeader {
    pub fn new(record: &EpisodeRecord, env: &str, controller: &str, mode: &str, timing: String, seed: u64) -> Self {
        Self {
            schema: TRACE_SCHEMA.into(),
            version: TRACE_VERSION,
            fields: ["t", "q", "qdot", "action", "beta", "goal", "obstacles", "diagnostics"].map(String::from).to_vec(),
            env: env.into(),
            controller: controller.into(),
            mode: mode.into(),
            timing,
            seed,
            suc: record.suc,
            safe: record.safe,
            l2d: record.l2d,
            ts: record.ts,
            arena: record.arena,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("not a trace file (schema {0:?})")]
    Schema(String),
    #[error("empty trace file")]
    Empty,
}

pub fn write_trace<W: Write>(header: &TraceHeader, steps: &[TraceStep], out: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_trace(path: &Path, header: &TraceHeader, steps: &[TraceStep]) -> std::io::Result<()> {
    write_trace(header, steps, std::fs::File::create(path)?)
}

pub fn load_trace(path: &Path) -> Result<(TraceHeader, Vec<TraceStep>), TraceError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or(TraceError::Empty)?;
    let header: TraceHeader = serde_json::from_str(&first?).map_err(|source| TraceError::Json { line: 1, source })?;
    if header.schema != TRACE_SCHEMA {
        return Err(TraceError::Schema(header.schema));
    }
    let mut steps = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|source| TraceError::Json { line: i + 1, source })?);
    }
    Ok((header, steps))
}

/// Rebuilds a record (without per-episode extras) from a loaded trace.
pub fn record_from(header: &TraceHeader, steps: Vec<TraceStep>) -> EpisodeRecord {
    EpisodeRecord { suc: header.suc, safe: header.safe, l2d: header.l2d, ts: header.ts, arena: header.arena, trace: steps }
}
