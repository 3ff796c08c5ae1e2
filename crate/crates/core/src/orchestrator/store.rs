//! Append-only run store.
//!
//! `runs.jsonl` holds one [`RunRecord`] per line. `runs.jsonl.idx` is a
//! sidecar with one `{offset, len, fingerprint, sample_id}` line per record so
//! a resume does not have to rescan the whole store. On open, index entries
//! pointing past the end of the store are discarded, records written after
//! the last indexed one are re-indexed, and a torn final line is cut off.
//! When a key appears more than once, the latest record wins.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::endpoint::ErrorClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedError {
    pub class: ErrorClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    pub message: String,
}

/// One (sample, prompt, response) exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub config_fingerprint: String,
    pub prompt: String,
    /// Raw model reply; absent when the exchange failed.
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RecordedError>,
    pub attempts: u32,
    pub latency_ms: u64,
    /// Unix epoch milliseconds.
    pub timestamp_ms: u64,
}

impl RunRecord {
    pub fn is_success(&self) -> bool {
        self.error.is_none() && self.response.is_some()
    }
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    offset: u64,
    len: u64,
    fingerprint: String,
    sample_id: String,
}

type Key = (String, String);

struct Inner {
    data: File,
    index_file: File,
    index: HashMap<Key, (u64, u64)>,
    end: u64,
}

pub struct RunStore {
    path: PathBuf,
    index_path: PathBuf,
    inner: Mutex<Inner>,
}

fn store_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Store {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl RunStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut index_path = path.clone().into_os_string();
        index_path.push(".idx");
        let index_path = PathBuf::from(index_path);

        let mut data = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut len = data.metadata()?.len();

        let mut index = HashMap::new();
        let mut stale_index = false;
        let mut indexed_end = 0;
        if index_path.exists() {
            for line in BufReader::new(File::open(&index_path)?).lines() {
                let line = line?;
                let entry = match serde_json::from_str::<IndexEntry>(&line) {
                    Ok(e) if e.offset + e.len <= len => e,
                    _ => {
                        stale_index = true;
                        continue;
                    }
                };
                indexed_end = indexed_end.max(entry.offset + entry.len);
                index.insert((entry.fingerprint, entry.sample_id), (entry.offset, entry.len));
            }
        }

        // Records past the indexed region (crash between the two appends).
        let mut tail = Vec::new();
        data.seek(SeekFrom::Start(indexed_end))?;
        data.read_to_end(&mut tail)?;
        let mut offset = indexed_end;
        let mut recovered = Vec::new();
        for chunk in tail.split_inclusive(|&b| b == b'\n') {
            if chunk.last() != Some(&b'\n') {
                log::warn!("{}: dropping torn final record ({} bytes)", path.display(), chunk.len());
                data.set_len(offset)?;
                len = offset;
                break;
            }
            let n = chunk.len() as u64;
            if chunk.iter().any(|b| !b.is_ascii_whitespace()) {
                let rec: RunRecord = serde_json::from_slice(chunk)
                    .map_err(|e| store_err(&path, format!("corrupt record at byte {offset}: {e}")))?;
                recovered.push(IndexEntry {
                    offset,
                    len: n,
                    fingerprint: rec.config_fingerprint,
                    sample_id: rec.sample_id,
                });
            }
            offset += n;
        }

        if stale_index {
            let mut f = File::create(&index_path)?;
            for ((fingerprint, sample_id), (offset, len)) in &index {
                let e = IndexEntry {
                    offset: *offset,
                    len: *len,
                    fingerprint: fingerprint.clone(),
                    sample_id: sample_id.clone(),
                };
                writeln!(f, "{}", serde_json::to_string(&e).expect("index entry serializes"))?;
            }
        }
        let mut index_file = OpenOptions::new().create(true).append(true).open(&index_path)?;
        for e in recovered {
            writeln!(index_file, "{}", serde_json::to_string(&e).expect("index entry serializes"))?;
            index.insert((e.fingerprint, e.sample_id), (e.offset, e.len));
        }
        index_file.sync_data()?;

        Ok(Self {
            path,
            index_path,
            inner: Mutex::new(Inner {
                data,
                index_file,
                index,
                end: len,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn index_path(&self) -> &Path {
        &self.index_path
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn len(&self) -> usize {
        self.lock().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, fingerprint: &str, sample_id: &str) -> bool {
        self.lock()
            .index
            .contains_key(&(fingerprint.to_string(), sample_id.to_string()))
    }

    pub fn get(&self, fingerprint: &str, sample_id: &str) -> Result<Option<RunRecord>> {
        let loc = self
            .lock()
            .index
            .get(&(fingerprint.to_string(), sample_id.to_string()))
            .copied();
        let Some((offset, len)) = loc else { return Ok(None) };
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0; len as usize];
        f.read_exact(&mut buf)?;
        serde_json::from_slice(&buf)
            .map(Some)
            .map_err(|e| store_err(&self.path, format!("corrupt record at byte {offset}: {e}")))
    }

    /// Appends one record and its index entry, durably.
    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("run record serializes");
        line.push('\n');
        let mut inner = self.lock();
        let offset = inner.end;
        inner.data.write_all(line.as_bytes())?;
        inner.data.sync_data()?;
        inner.end += line.len() as u64;
        let entry = IndexEntry {
            offset,
            len: line.len() as u64,
            fingerprint: record.config_fingerprint.clone(),
            sample_id: record.sample_id.clone(),
        };
        writeln!(inner.index_file, "{}", serde_json::to_string(&entry).expect("index entry serializes"))?;
        inner
            .index
            .insert((entry.fingerprint, entry.sample_id), (offset, line.len() as u64));
        Ok(())
    }
}

/// Reads every record in a store file, latest per key, in first-seen order.
/// A missing file reads as empty.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut order: Vec<RunRecord> = Vec::new();
    let mut slot: HashMap<Key, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            // A torn last line is tolerated; anything else is corruption.
            Err(_) if i + 1 == text.lines().count() && !text.ends_with('\n') => break,
            Err(e) => return Err(store_err(path, format!("line {}: {e}", i + 1))),
        };
        let key = (rec.config_fingerprint.clone(), rec.sample_id.clone());
        match slot.get(&key) {
            Some(&at) => order[at] = rec,
            None => {
                slot.insert(key, order.len());
                order.push(rec);
            }
        }
    }
    Ok(order)
}
