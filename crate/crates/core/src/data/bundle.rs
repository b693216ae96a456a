//! On-disk dataset bundle.
//!
//! A bundle is a directory holding:
//!
//! | file          | contents                                                   |
//! |---------------|------------------------------------------------------------|
//! | `meta.json`   | [`BundleMeta`]: counts, statistics, filter and split params |
//! | `items.bin`   | dense item ids of all users concatenated, `u32` LE          |
//! | `offsets.bin` | `user_count + 1` offsets into `items.bin`, `u32` LE         |
//! | `item_ids.txt`| raw item id of dense id `k` on line `k` (1-based)           |
//! | `user_ids.txt`| raw user id of dense user `u` on line `u + 1`               |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ingest::InputFormat;
use super::preprocess::{Catalog, DatasetStats, InteractionLog, PreprocessConfig};
use crate::error::{Error, Result};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub version: u32,
    pub source: String,
    pub input_format: InputFormat,
    pub preprocess: PreprocessConfig,
    pub stats: DatasetStats,
    pub n_holdout: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

fn u32s_to_le(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn le_to_u32s(bytes: &[u8], what: &str) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Bundle(format!("{what} length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn lines(names: &[String]) -> Vec<u8> {
    let mut out = String::with_capacity(names.iter().map(|n| n.len() + 1).sum());
    for n in names {
        out.push_str(n);
        out.push('\n');
    }
    out.into_bytes()
}

/// Writes each file only if its bytes differ. Returns `true` if anything changed.
pub fn write_bundle(dir: impl AsRef<Path>, log: &InteractionLog, meta: &BundleMeta) -> Result<bool> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta_json = serde_json::to_vec_pretty(meta)?;
    meta_json.push(b'\n');
    let files: [(&str, Vec<u8>); 5] = [
        ("meta.json", meta_json),
        ("items.bin", u32s_to_le(log.flat_items())),
        ("offsets.bin", u32s_to_le(log.offsets())),
        ("item_ids.txt", lines(log.catalog().item_names())),
        ("user_ids.txt", lines(log.catalog().user_names())),
    ];
    let mut changed = false;
    for (name, bytes) in files {
        let path = dir.join(name);
        if fs::read(&path).ok().as_deref() == Some(bytes.as_slice()) {
            continue;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        changed = true;
    }
    Ok(changed)
}

pub fn read_meta(dir: impl AsRef<Path>) -> Result<BundleMeta> {
    let path = dir.as_ref().join("meta.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BundleMeta = serde_json::from_slice(&bytes)?;
    if meta.version != BUNDLE_VERSION {
        return Err(Error::Bundle(format!("unsupported bundle version {}", meta.version)));
    }
    Ok(meta)
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<(InteractionLog, BundleMeta)> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let items = le_to_u32s(&read("items.bin")?, "items.bin")?;
    let offsets = le_to_u32s(&read("offsets.bin")?, "offsets.bin")?;
    let names = |bytes: Vec<u8>| -> Result<Vec<String>> {
        let text = String::from_utf8(bytes).map_err(|_| Error::Bundle("id table is not UTF-8".into()))?;
        Ok(text.lines().map(str::to_owned).collect())
    };
    let catalog = Catalog::new(names(read("item_ids.txt")?)?, names(read("user_ids.txt")?)?)?;
    let log = InteractionLog::from_parts(catalog, items, offsets)?;
    if log.stats().interactions != meta.stats.interactions || log.user_count() != meta.stats.users {
        return Err(Error::Bundle("meta.json counts do not match the arrays".into()));
    }
    Ok((log, meta))
}
