//! Feature cache: one JSON object per line, one line per item.
//!
//! Each line holds `signal_id`, `treatment_id` and the full feature series
//! including item means, so calibration can run without decoding audio.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use csm_core::{Cem, Dm, FeatureSeries};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheRecord {
    pub signal_id: String,
    pub treatment_id: String,
    pub features: FeatureSeries,
}

pub fn write_cache(path: &Path, records: &[CacheRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Cache(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<Vec<CacheRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CacheRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Cache(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Long-format CSV: one row per item and frame.
pub fn write_csv(out: &mut impl Write, records: &[CacheRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["signal_id".to_string(), "treatment_id".into(), "frame".into()];
    header.extend(Dm::ALL.iter().map(|d| d.name().to_string()));
    header.extend(Cem::ALL.iter().map(|c| c.name().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        for (t, (dm, cem)) in r.features.dm.iter().zip(&r.features.cem).enumerate() {
            let mut row = vec![r.signal_id.clone(), r.treatment_id.clone(), t.to_string()];
            row.extend(dm.iter().map(|v| v.to_string()));
            row.extend(cem.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Cache(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Cache(e.to_string())
}
