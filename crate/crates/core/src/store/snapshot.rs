use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::engine::Registry;

/// Registry state after the record with `global_seq` was applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub global_seq: u64,
    pub registry: Registry,
}

fn snapshot_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("snapshot-{seq}.json"))
}

/// Writes `snapshot-<seq>.json` atomically (temp file, then rename).
pub fn write_snapshot(dir: &Path, global_seq: u64, registry: &Registry) -> Result<(), StoreError> {
    let snap = Snapshot {
        global_seq,
        registry: registry.clone(),
    };
    let tmp = dir.join(format!(".snapshot-{global_seq}.tmp"));
    let bytes = serde_json::to_vec(&snap).expect("snapshots serialize");
    fs::write(&tmp, bytes)?;
    fs::File::open(&tmp)?.sync_all()?;
    fs::rename(&tmp, snapshot_path(dir, global_seq))?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot, StoreError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::IoFailure(e.to_string()))
}

/// Newest readable snapshot not past `max_seq`. Snapshots beyond the log end
/// (the log lost its tail) or that fail to parse are skipped.
pub fn latest_snapshot(dir: &Path, max_seq: u64) -> Result<Option<Snapshot>, StoreError> {
    let mut seqs: Vec<u64> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("snapshot-")?
                .strip_suffix(".json")?
                .parse()
                .ok()
        })
        .filter(|seq| *seq <= max_seq)
        .collect();
    seqs.sort_unstable();
    for seq in seqs.into_iter().rev() {
        match load_snapshot(&snapshot_path(dir, seq)) {
            Ok(snap) if snap.global_seq == seq => return Ok(Some(snap)),
            _ => continue,
        }
    }
    Ok(None)
}
