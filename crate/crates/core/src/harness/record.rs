use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub val_ppl: f64,
}

/// One line of a `records.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub label: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub series: Vec<EvalPoint>,
    pub final_ppl: f64,
    /// Wall-clock seconds of the job that produced this run. The only field
    /// that differs between reruns.
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_time_s: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let steps_increase = self.series.windows(2).all(|w| w[0].step < w[1].step);
        let ppl_ok = self.series.iter().all(|p| p.val_ppl >= 1.0) && self.final_ppl >= 1.0;
        if steps_increase && ppl_ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("malformed run record for {}", self.label)))
        }
    }
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::malformed(path, e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}
