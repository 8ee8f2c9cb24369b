//! Persistent response cache backing offline use.
//!
//! One file per key. Writes go to a temp file in the same directory and are
//! renamed into place, so a reader sees either the previous complete entry
//! or the new one. Each file carries a length and SHA-256 of the payload and
//! a damaged file is reported as [`CacheError::Corrupt`], never returned.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use sha2::{Digest, Sha256};
use thiserror::Error;

const MAGIC: &str = "labdash-cache-v1";
const ENTRY_EXT: &str = "entry";
const TEMP_EXT: &str = "tmp";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CacheKey {
    Header { patient: String },
    Observations { patient: String, concept: String },
}

impl CacheKey {
    pub fn header(patient: impl Into<String>) -> Self {
        CacheKey::Header {
            patient: patient.into(),
        }
    }

    pub fn observations(patient: impl Into<String>, concept: impl Into<String>) -> Self {
        CacheKey::Observations {
            patient: patient.into(),
            concept: concept.into(),
        }
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheKey::Header { patient } => write!(f, "{patient}/header"),
            CacheKey::Observations { patient, concept } => write!(f, "{patient}/obs/{concept}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub payload: Vec<u8>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cache entry {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

/// Where an injected crash interrupts [`DiskCache::put`].
#[cfg(any(test, feature = "fault-injection"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Only the first `n` bytes of the temp file reach disk.
    MidWrite(usize),
    /// The temp file is complete but never renamed.
    BeforeRename,
}

#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    writers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    seq: AtomicU64,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl DiskCache {
    /// Open (creating if needed) a cache directory. Temp files left by an
    /// interrupted writer are removed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_some_and(|e| e == TEMP_EXT) {
                let _ = fs::remove_file(&path);
            }
        }
        Ok(Self {
            dir,
            writers: Mutex::new(HashMap::new()),
            seq: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_stem(key: &CacheKey) -> String {
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir
            .join(format!("{}.{ENTRY_EXT}", Self::file_stem(key)))
    }

    fn temp_path(&self, key: &CacheKey) -> PathBuf {
        let n = self.seq.fetch_add(1, Ordering::Relaxed);
        self.dir.join(format!(
            "{}.{}.{n}.{TEMP_EXT}",
            Self::file_stem(key),
            std::process::id()
        ))
    }

    fn writer_lock(&self, key: &CacheKey) -> Arc<Mutex<()>> {
        self.writers
            .lock()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, CacheError> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        decode(&bytes, &Self::file_stem(key))
            .map(Some)
            .map_err(|reason| CacheError::Corrupt { path, reason })
    }

    pub fn put(&self, key: &CacheKey, payload: &[u8]) -> Result<(), CacheError> {
        self.put_at(key, payload, Utc::now())
    }

    pub fn put_at(
        &self,
        key: &CacheKey,
        payload: &[u8],
        fetched_at: DateTime<Utc>,
    ) -> Result<(), CacheError> {
        let lock = self.writer_lock(key);
        let _guard = lock.lock();
        let encoded = encode(key, payload, fetched_at);
        let tmp = self.temp_path(key);
        let result = write_synced(&tmp, &encoded).and_then(|()| {
            let target = self.entry_path(key);
            fs::rename(&tmp, &target).map_err(io_err(&target))
        });
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result
    }

    /// Run a put that "crashes" at the given point, leaving the disk as a
    /// killed process would.
    #[cfg(any(test, feature = "fault-injection"))]
    pub fn put_interrupted(&self, key: &CacheKey, payload: &[u8], crash: CrashPoint) -> Result<(), CacheError> {
        let lock = self.writer_lock(key);
        let _guard = lock.lock();
        let encoded = encode(key, payload, Utc::now());
        let tmp = self.temp_path(key);
        match crash {
            CrashPoint::MidWrite(n) => write_synced(&tmp, &encoded[..n.min(encoded.len())]),
            CrashPoint::BeforeRename => write_synced(&tmp, &encoded),
        }
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

fn encode(key: &CacheKey, payload: &[u8], fetched_at: DateTime<Utc>) -> Vec<u8> {
    let header = format!(
        "{MAGIC}\n{}\n{}\n{}\n{}\n",
        DiskCache::file_stem(key),
        fetched_at.to_rfc3339(),
        payload.len(),
        hex::encode(Sha256::digest(payload)),
    );
    let mut out = header.into_bytes();
    out.extend_from_slice(payload);
    out
}

fn decode(bytes: &[u8], expected_key: &str) -> Result<CacheEntry, String> {
    let mut rest = bytes;
    let mut header = Vec::with_capacity(5);
    for _ in 0..5 {
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("truncated header")?;
        header.push(std::str::from_utf8(&rest[..nl]).map_err(|_| "header is not UTF-8")?);
        rest = &rest[nl + 1..];
    }
    if header[0] != MAGIC {
        return Err("bad magic".into());
    }
    if header[1] != expected_key {
        return Err("entry belongs to another key".into());
    }
    let fetched_at = DateTime::parse_from_rfc3339(header[2])
        .map_err(|e| format!("bad timestamp: {e}"))?
        .with_timezone(&Utc);
    let len: usize = header[3].parse().map_err(|_| "bad length")?;
    if rest.len() != len {
        return Err(format!("payload is {} bytes, expected {len}", rest.len()));
    }
    if hex::encode(Sha256::digest(rest)) != header[4] {
        return Err("checksum mismatch".into());
    }
    Ok(CacheEntry {
        payload: rest.to_vec(),
        fetched_at,
    })
}
