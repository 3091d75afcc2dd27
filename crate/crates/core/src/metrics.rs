//! Training metrics persistence: one JSON record per line, flushed per
//! append so a crash loses at most the line being written. The reader
//! tolerates a partial trailing line and nothing else.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training-step record. `betas` carries the per-task layer-mixing
/// weights so attention trajectories can be plotted after the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub l_rec: f64,
    pub l_rank: f64,
    pub l_cluster: f64,
    pub l_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_total: Option<f64>,
    pub betas: BTreeMap<String, Vec<f64>>,
    /// In-memory only: wall time is nondeterministic, and the on-disk log
    /// must be bit-identical across reruns of the same seed.
    #[serde(skip)]
    pub wall_ms: f64,
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsWriter { out: BufWriter::new(File::create(path)?) })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Format { line: 0, msg: e.to_string() })?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a metrics log. A malformed final line (torn write) is skipped; a
/// malformed line anywhere else is an error.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == lines.len() => {
                let _ = e; // torn tail from an interrupted append
                break;
            }
            Err(e) => {
                return Err(Error::Format { line: i + 1, msg: e.to_string() });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64) -> MetricsRecord {
        MetricsRecord {
            step,
            l_rec: 0.5,
            l_rank: 0.6,
            l_cluster: 0.7,
            l_total: 1.8,
            val_total: (step % 2 == 0).then_some(1.9),
            betas: BTreeMap::from([("rec".to_string(), vec![0.3, 0.3, 0.4])]),
            wall_ms: 12.0,
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("graphpre-metrics-{name}-{}", std::process::id()))
    }

    #[test]
    fn n_appends_give_n_records() {
        let path = tmp("basic");
        let mut w = MetricsWriter::create(&path).unwrap();
        for s in 0..5 {
            w.append(&record(s)).unwrap();
        }
        drop(w);
        let records = read_metrics(&path).unwrap();
        assert_eq!(records.len(), 5);
        let expected = MetricsRecord { wall_ms: 0.0, ..record(3) };
        assert_eq!(records[3], expected);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn reader_tolerates_partial_tail() {
        let path = tmp("tail");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.append(&record(0)).unwrap();
        w.append(&record(1)).unwrap();
        drop(w);
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"step\":2,\"l_rec\":0.").unwrap();
        drop(f);
        let records = read_metrics(&path).unwrap();
        assert_eq!(records.len(), 2);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn reader_rejects_malformed_interior_line() {
        let path = tmp("interior");
        std::fs::write(&path, "garbage\n").unwrap();
        let mut w = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        let line = serde_json::to_string(&record(0)).unwrap();
        writeln!(w, "{line}").unwrap();
        drop(w);
        assert!(matches!(read_metrics(&path), Err(Error::Format { line: 1, .. })));
        let _ = std::fs::remove_file(&path);
    }
}
