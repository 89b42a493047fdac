//! Listening-test database manifest.
//!
//! CSV with header `signal_id,treatment_id,ref_path,sut_path,mean_score,scale`
//! and an optional trailing `split` column (`bf` or `interaction`). Paths are
//! resolved relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Mushra,
    Sdg,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Mushra => "mushra",
            Scale::Sdg => "sdg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Bf,
    Interaction,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Bf => "bf",
            Split::Interaction => "interaction",
        }
    }
}

/// Linear SDG to MUSHRA map: -4 goes to 20, 0 goes to 100.
pub fn sdg_to_mushra(sdg: f64) -> f64 {
    100.0 + 20.0 * sdg
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbItem {
    pub signal_id: String,
    pub treatment_id: String,
    pub ref_path: PathBuf,
    pub sut_path: PathBuf,
    pub mean_score: f64,
    pub scale: Scale,
    pub split: Option<Split>,
}

impl DbItem {
    /// Score on the MUSHRA scale.
    pub fn mushra(&self) -> f64 {
        match self.scale {
            Scale::Mushra => self.mean_score,
            Scale::Sdg => sdg_to_mushra(self.mean_score),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListeningTestDatabase {
    /// Directory that relative item paths are resolved against.
    pub root: PathBuf,
    pub items: Vec<DbItem>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    signal_id: String,
    treatment_id: String,
    ref_path: PathBuf,
    sut_path: PathBuf,
    mean_score: f64,
    scale: String,
    #[serde(default)]
    split: Option<String>,
}

impl ListeningTestDatabase {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    /// Parses manifest text. Row numbers in errors count data rows from 1.
    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut items = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, rec) in reader.deserialize::<Row>().enumerate() {
            let row = i + 1;
            let bad = |message: String| Error::ManifestRow { row, message };
            let r = rec.map_err(|e| bad(e.to_string()))?;
            let scale = match r.scale.to_ascii_lowercase().as_str() {
                "mushra" => Scale::Mushra,
                "sdg" => Scale::Sdg,
                other => return Err(bad(format!("unknown scale {other:?}"))),
            };
            let ok = match scale {
                Scale::Mushra => (0.0..=100.0).contains(&r.mean_score),
                Scale::Sdg => (-4.0..=0.0).contains(&r.mean_score),
            };
            if !ok {
                return Err(bad(format!(
                    "score {} outside the {} range",
                    r.mean_score,
                    scale.name()
                )));
            }
            let split = match r.split.as_deref().map(str::to_ascii_lowercase).as_deref() {
                None | Some("") => None,
                Some("bf") => Some(Split::Bf),
                Some("interaction") => Some(Split::Interaction),
                Some(other) => return Err(bad(format!("unknown split {other:?}"))),
            };
            if r.signal_id.is_empty() || r.treatment_id.is_empty() {
                return Err(bad("empty signal or treatment id".into()));
            }
            if !seen.insert((r.signal_id.clone(), r.treatment_id.clone())) {
                return Err(bad(format!(
                    "duplicate item ({}, {})",
                    r.signal_id, r.treatment_id
                )));
            }
            items.push(DbItem {
                signal_id: r.signal_id,
                treatment_id: r.treatment_id,
                ref_path: r.ref_path,
                sut_path: r.sut_path,
                mean_score: r.mean_score,
                scale,
                split,
            });
        }
        if items.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        Ok(ListeningTestDatabase { root, items })
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(e.to_string()))?;
        let with_split = self.items.iter().any(|i| i.split.is_some());
        let mut header = vec!["signal_id", "treatment_id", "ref_path", "sut_path", "mean_score", "scale"];
        if with_split {
            header.push("split");
        }
        w.write_record(&header).map_err(|e| Error::Manifest(e.to_string()))?;
        for it in &self.items {
            let mut row = vec![
                it.signal_id.clone(),
                it.treatment_id.clone(),
                it.ref_path.to_string_lossy().into_owned(),
                it.sut_path.to_string_lossy().into_owned(),
                it.mean_score.to_string(),
                it.scale.name().to_string(),
            ];
            if with_split {
                row.push(it.split.map(|s| s.name().to_string()).unwrap_or_default());
            }
            w.write_record(&row).map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Treatment counts per signal.
    pub fn treatment_counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for it in &self.items {
            *m.entry(it.signal_id.as_str()).or_insert(0) += 1;
        }
        m
    }
}
