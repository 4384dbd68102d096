//! JSONL manifests: one line per selected sample, in pick order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::cache::write_atomic;
use crate::selector::Pick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub rank: usize,
    pub s_com: Option<f64>,
    pub s_div: Option<f64>,
    pub s_combined: Option<f64>,
    pub version: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub shortfall: bool,
}

impl ManifestEntry {
    pub fn from_pick(pick: &Pick, version: &str) -> Self {
        ManifestEntry {
            id: pick.id,
            rank: pick.rank,
            s_com: pick.s_com,
            s_div: pick.s_div,
            s_combined: pick.s_combined,
            version: version.to_string(),
            shortfall: pick.shortfall,
        }
    }
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(rows)?)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_jsonl(path, entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
