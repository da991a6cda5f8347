//! Chain trace and checkpoint serialization.
//!
//! Traces are JSON-lines files: a self-describing header record followed by
//! one record per retained sweep. Infection times are stored sparsely
//! (farm index, time) so the records stay finite and compact. Checkpoints
//! are single JSON documents written atomically (write-then-rename) and
//! carry everything needed to continue a run bit-for-bit, including the
//! serialized generator state.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// First line of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub n_farms: usize,
    pub knots: Vec<f64>,
    /// Fixed GP amplitude.
    pub alpha: f64,
    /// Fixed infectious-period shape.
    pub shape: f64,
    /// Exponential prior rate shared by the length scale, removal rate, and
    /// negated index infection time.
    pub prior_rate: f64,
    pub seed: u64,
    pub chain: u64,
    /// Set when the length scale was held fixed.
    pub fixed_length_scale: Option<f64>,
}

/// One retained sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sweep: u64,
    pub g_bar: Vec<f64>,
    pub length_scale: f64,
    pub gamma: f64,
    pub omega: usize,
    pub i_omega: f64,
    pub log_likelihood: f64,
    /// (farm index, infection time) for every infected farm, ascending.
    pub infections: Vec<(usize, f64)>,
    /// Infected pre-emptively culled farms, ascending.
    pub c_members: Vec<usize>,
}

impl TraceRecord {
    /// Sum of all infection times in this sweep.
    pub fn infection_time_sum(&self) -> f64 {
        self.infections.iter().map(|&(_, t)| t).sum()
    }
}

/// A full chain trace held in memory.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

/// Streaming trace writer.
pub struct TraceWriter {
    out: BufWriter<File>,
    path: PathBuf,
    records_written: u64,
}

impl TraceWriter {
    /// Create a fresh trace file, writing the header line.
    pub fn create(path: impl AsRef<Path>, header: &TraceHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(TraceWriter {
            out,
            path,
            records_written: 0,
        })
    }

    /// Reopen an existing trace for appending after a checkpoint restore.
    /// The file is truncated to the header plus `keep_records` records; it
    /// is an error for the trace to hold fewer than that.
    pub fn resume(path: impl AsRef<Path>, header: &TraceHeader, keep_records: u64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let existing = read_trace(&path)?;
        if existing.header != *header {
            return Err(Error::Checkpoint(format!(
                "trace header in {} does not match the resumed run",
                path.display()
            )));
        }
        if (existing.records.len() as u64) < keep_records {
            return Err(Error::Checkpoint(format!(
                "trace {} holds {} records but the checkpoint expects {}",
                path.display(),
                existing.records.len(),
                keep_records
            )));
        }
        let mut writer = TraceWriter::create(&path, header)?;
        for record in existing.records.iter().take(keep_records as usize) {
            writer.append(record)?;
        }
        writer.flush()?;
        Ok(writer)
    }

    pub fn append(&mut self, record: &TraceRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.records_written += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.records_written
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Read a complete trace file, validating the schema version.
pub fn read_trace(path: impl AsRef<Path>) -> Result<ChainTrace> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines.next().transpose()?.ok_or_else(|| {
        Error::Checkpoint(format!("trace {} is empty", path.display()))
    })?;
    let header: TraceHeader = serde_json::from_str(&header_line)?;
    if header.schema_version != TRACE_SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "trace {} has schema version {}, expected {}",
            path.display(),
            header.schema_version,
            TRACE_SCHEMA_VERSION
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(ChainTrace { header, records })
}

/// Adapted proposal scales at a point in the run, plus the per-update
/// adaptation step counts so a resumed run continues the same schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningSnapshot {
    pub delta: f64,
    pub sigma_length_scale: f64,
    pub sigma_gamma: f64,
    pub sigma_i_omega: f64,
    pub adapt_counts: [u64; 4],
}

/// Atomic snapshot of a running chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    /// Next sweep index to execute.
    pub sweep: u64,
    pub records_written: u64,
    pub g_bar: Vec<f64>,
    pub length_scale: f64,
    pub gamma: f64,
    pub omega: usize,
    /// Sparse infection times, ascending by farm.
    pub infections: Vec<(usize, f64)>,
    pub log_likelihood: f64,
    pub tuning: TuningSnapshot,
    pub rng: ChaCha8Rng,
}

/// Serialize `value` to `path` via a temporary file and rename, so readers
/// never observe a partial document.
pub fn atomic_write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp)?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, value)?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    atomic_write_json(path, checkpoint)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    if checkpoint.schema_version != TRACE_SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint {} has schema version {}, expected {}",
            path.display(),
            checkpoint.schema_version,
            TRACE_SCHEMA_VERSION
        )));
    }
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn header() -> TraceHeader {
        TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            n_farms: 4,
            knots: vec![0.0, 1.0, 2.0],
            alpha: 9.0,
            shape: 4.0,
            prior_rate: 0.01,
            seed: 7,
            chain: 0,
            fixed_length_scale: Some(3.0),
        }
    }

    fn record(sweep: u64) -> TraceRecord {
        TraceRecord {
            sweep,
            g_bar: vec![0.1, -0.2, 0.3],
            length_scale: 3.0,
            gamma: 0.8,
            omega: 1,
            i_omega: -2.5,
            log_likelihood: -34.5,
            infections: vec![(1, -2.5), (2, 0.7)],
            c_members: vec![2],
        }
    }

    #[test]
    fn trace_round_trips() {
        let dir = std::env::temp_dir().join(format!("trace-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("chain.jsonl");
        let mut writer = TraceWriter::create(&path, &header()).unwrap();
        for sweep in 0..5 {
            writer.append(&record(sweep)).unwrap();
        }
        writer.flush().unwrap();
        let trace = read_trace(&path).unwrap();
        assert_eq!(trace.header, header());
        assert_eq!(trace.records.len(), 5);
        assert_eq!(trace.records[3], record(3));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn resume_truncates_to_the_checkpointed_record_count() {
        let dir = std::env::temp_dir().join(format!("trace-resume-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("chain.jsonl");
        let mut writer = TraceWriter::create(&path, &header()).unwrap();
        for sweep in 0..6 {
            writer.append(&record(sweep)).unwrap();
        }
        writer.flush().unwrap();
        drop(writer);
        // Keep only the first 4 records, then append a fresh one.
        let mut resumed = TraceWriter::resume(&path, &header(), 4).unwrap();
        assert_eq!(resumed.records_written(), 4);
        resumed.append(&record(99)).unwrap();
        resumed.flush().unwrap();
        let trace = read_trace(&path).unwrap();
        assert_eq!(trace.records.len(), 5);
        assert_eq!(trace.records[4].sweep, 99);
        // A checkpoint ahead of the trace is an error.
        assert!(TraceWriter::resume(&path, &header(), 50).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn schema_version_is_enforced() {
        let dir = std::env::temp_dir().join(format!("trace-schema-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("chain.jsonl");
        let mut bad = header();
        bad.schema_version = 999;
        let writer = TraceWriter::create(&path, &bad).unwrap();
        drop(writer);
        assert!(read_trace(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn checkpoint_round_trips_with_rng_state() {
        let dir = std::env::temp_dir().join(format!("ckpt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("checkpoint.json");
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Advance the generator so the restored state is mid-stream.
        for _ in 0..17 {
            let _: f64 = rng.gen();
        }
        let checkpoint = Checkpoint {
            schema_version: TRACE_SCHEMA_VERSION,
            sweep: 120,
            records_written: 10,
            g_bar: vec![0.5, -1.5],
            length_scale: 2.0,
            gamma: 0.9,
            omega: 0,
            infections: vec![(0, -1.0)],
            log_likelihood: -12.25,
            tuning: TuningSnapshot {
                delta: 0.2,
                sigma_length_scale: 1.0,
                sigma_gamma: 0.1,
                sigma_i_omega: 0.5,
                adapt_counts: [3, 1, 4, 1],
            },
            rng: rng.clone(),
        };
        write_checkpoint(&path, &checkpoint).unwrap();
        let mut restored = read_checkpoint(&path).unwrap();
        assert_eq!(restored.sweep, 120);
        assert_eq!(restored.g_bar, checkpoint.g_bar);
        // The restored generator continues identically.
        let a: u64 = rng.gen();
        let b: u64 = restored.rng.gen();
        assert_eq!(a, b);
        assert!(!path.with_extension("tmp").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
