//! On-disk cache of backward tables.
//!
//! File layout: the 8-byte magic `ABTABLE1`, the header length as a
//! little-endian `u64`, a JSON [`TableHeader`], then the body. The body
//! holds `horizon + 1` rows, each the row's `log_scale` followed by the
//! window values, all little-endian `f64`.

use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge_engine::{BackwardSource, BridgeError};
use crate::killed_kernel::{BackwardTable, KilledWalk, ScaledVec, Window};
use crate::walk_laws::IncrementLaw;

const MAGIC: &[u8; 8] = b"ABTABLE1";
pub const TABLE_EXT: &str = "abt";
const FORMAT: &str = "avoidbridge-backward-1";
/// Locks older than this are taken to be left over from a crashed writer.
const STALE_LOCK: Duration = Duration::from_secs(3600);

#[derive(Debug, Error)]
pub enum CacheError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt cache file {path}: {reason}")]
    Corrupt { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub format: String,
    pub law: String,
    pub killing: String,
    pub target: i64,
    pub horizon: usize,
    pub window: [i64; 2],
    pub body_sha256: String,
}

impl TableHeader {
    fn for_walk(law: &IncrementLaw, walk: &KilledWalk, target: i64, n: usize) -> TableHeader {
        TableHeader {
            format: FORMAT.to_string(),
            law: law.digest(),
            killing: walk.killing.label(),
            target,
            horizon: n,
            window: [walk.window.lo, walk.window.hi],
            body_sha256: String::new(),
        }
    }

    /// Cache key: hash of everything but the body hash.
    pub fn key(&self) -> String {
        let id = format!("{}|{}|{}|{}|{}|{}:{}", self.format, self.law, self.killing, self.target, self.horizon, self.window[0], self.window[1]);
        hex::encode(Sha256::digest(id.as_bytes()))
    }

    fn same_table(&self, other: &TableHeader) -> bool {
        self.key() == other.key()
    }
}

fn encode(table: &BackwardTable, mut header: TableHeader) -> Vec<u8> {
    let mut body = Vec::with_capacity(table.steps.len() * (table.window.len() + 1) * 8);
    for s in &table.steps {
        body.extend_from_slice(&s.log_scale.to_le_bytes());
        for x in &s.v {
            body.extend_from_slice(&x.to_le_bytes());
        }
    }
    header.body_sha256 = hex::encode(Sha256::digest(&body));
    let head = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + head.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&body);
    out
}

/// Decode and verify a cache file.
pub fn decode(bytes: &[u8]) -> Result<(TableHeader, BackwardTable), String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("bad magic".into());
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let head = bytes.get(16..16 + hlen).ok_or("truncated header")?;
    let header: TableHeader = serde_json::from_slice(head).map_err(|e| format!("header: {e}"))?;
    let body = &bytes[16 + hlen..];
    if hex::encode(Sha256::digest(body)) != header.body_sha256 {
        return Err("body hash mismatch".into());
    }
    let window = Window::new(header.window[0], header.window[1]);
    let row = window.len() + 1;
    if body.len() != 8 * row * (header.horizon + 1) {
        return Err("body size does not match the header".into());
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let steps = vals.chunks_exact(row).map(|r| ScaledVec { log_scale: r[0], v: r[1..].to_vec() }).collect();
    let table = BackwardTable { target: header.target, window, steps };
    Ok((header, table))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub builds: usize,
    pub quarantined: usize,
    /// Tables built but not stored because of an I/O error.
    pub write_failures: usize,
}

/// Removes the lock file when the writer is done.
struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Directory cache, safe for concurrent readers and one writer per key.
#[derive(Debug)]
pub struct TableCache {
    dir: PathBuf,
    hits: AtomicUsize,
    builds: AtomicUsize,
    quarantined: AtomicUsize,
    write_failures: AtomicUsize,
    tmp_counter: AtomicU64,
}

impl TableCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<TableCache, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(TableCache {
            dir,
            hits: AtomicUsize::new(0),
            builds: AtomicUsize::new(0),
            quarantined: AtomicUsize::new(0),
            write_failures: AtomicUsize::new(0),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            builds: self.builds.load(Ordering::Relaxed),
            quarantined: self.quarantined.load(Ordering::Relaxed),
            write_failures: self.write_failures.load(Ordering::Relaxed),
        }
    }

    pub fn path_for(&self, law: &IncrementLaw, walk: &KilledWalk, target: i64, n: usize) -> PathBuf {
        let key = TableHeader::for_walk(law, walk, target, n).key();
        self.dir.join(format!("{key}.{TABLE_EXT}"))
    }

    fn quarantine(&self, path: &Path) -> io::Result<()> {
        let q = self.dir.join("quarantine");
        fs::create_dir_all(&q)?;
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.quarantined.fetch_add(1, Ordering::Relaxed);
        match fs::rename(path, q.join(format!("{name}.{stamp}"))) {
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            r => r,
        }
    }

    /// Load a verified table; corrupt files are quarantined and reported
    /// as missing.
    fn load(&self, path: &Path, want: &TableHeader) -> Result<Option<BackwardTable>, CacheError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        match decode(&bytes) {
            Ok((h, t)) if h.same_table(want) => {
                if let Ok(f) = OpenOptions::new().write(true).open(path) {
                    let _ = f.set_modified(SystemTime::now());
                }
                Ok(Some(t))
            }
            _ => {
                self.quarantine(path)?;
                Ok(None)
            }
        }
    }

    /// A cached table, if present and intact. Does not touch the counters.
    pub fn lookup(&self, law: &IncrementLaw, walk: &KilledWalk, target: i64, n: usize) -> Result<Option<BackwardTable>, CacheError> {
        let want = TableHeader::for_walk(law, walk, target, n);
        self.load(&self.path_for(law, walk, target, n), &want)
    }

    fn store(&self, path: &Path, table: &BackwardTable, header: TableHeader) -> io::Result<()> {
        let k = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp.{}.{k}", std::process::id()));
        fs::write(&tmp, encode(table, header))?;
        fs::rename(&tmp, path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }

    /// The table for `(law, walk, target, n)`, building and storing it on a miss.
    pub fn get_or_build(&self, law: &IncrementLaw, walk: &KilledWalk, target: i64, n: usize) -> Result<BackwardTable, CacheError> {
        let want = TableHeader::for_walk(law, walk, target, n);
        let path = self.path_for(law, walk, target, n);
        let lock = path.with_extension("lock");
        loop {
            if let Some(t) = self.load(&path, &want)? {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(t);
            }
            match OpenOptions::new().write(true).create_new(true).open(&lock) {
                Ok(_) => {
                    let _guard = LockGuard(lock.clone());
                    // Another writer may have finished in between.
                    if let Some(t) = self.load(&path, &want)? {
                        self.hits.fetch_add(1, Ordering::Relaxed);
                        return Ok(t);
                    }
                    let t = BackwardTable::build(walk, target, n);
                    self.builds.fetch_add(1, Ordering::Relaxed);
                    if self.store(&path, &t, want).is_err() {
                        self.write_failures.fetch_add(1, Ordering::Relaxed);
                    }
                    return Ok(t);
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let age = fs::metadata(&lock).and_then(|m| m.modified()).ok().and_then(|m| m.elapsed().ok());
                    if age.is_some_and(|a| a > STALE_LOCK) {
                        let _ = fs::remove_file(&lock);
                    } else {
                        std::thread::sleep(Duration::from_millis(20));
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl BackwardSource for TableCache {
    fn backward(&self, law: &IncrementLaw, walk: &KilledWalk, target: i64, n: usize) -> Result<BackwardTable, BridgeError> {
        match self.get_or_build(law, walk, target, n) {
            Ok(t) => Ok(t),
            Err(_) => {
                self.write_failures.fetch_add(1, Ordering::Relaxed);
                self.builds.fetch_add(1, Ordering::Relaxed);
                Ok(BackwardTable::build(walk, target, n))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcEntry {
    pub file: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcReport {
    pub evicted: Vec<GcEntry>,
    /// Tables with a live lock file or a pending temp file.
    pub in_flight: Vec<String>,
    pub bytes_before: u64,
    pub bytes_after: u64,
}

/// Evict least-recently-used tables until the cache holds at most
/// `max_bytes`. Tables being written are never evicted.
pub fn cache_gc(dir: &Path, max_bytes: u64) -> Result<GcReport, CacheError> {
    let mut tables = Vec::new();
    let mut busy = std::collections::BTreeSet::new();
    for e in fs::read_dir(dir)? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        let Some((stem, ext)) = name.split_once('.') else { continue };
        if ext == "lock" || ext.starts_with("tmp.") {
            busy.insert(stem.to_string());
        } else if ext == TABLE_EXT {
            let m = e.metadata()?;
            tables.push((m.modified()?, name.clone(), stem.to_string(), m.len()));
        }
    }
    tables.sort();
    let mut report = GcReport { bytes_before: tables.iter().map(|t| t.3).sum(), ..GcReport::default() };
    let mut total = report.bytes_before;
    for (_, name, stem, bytes) in &tables {
        if busy.contains(stem) {
            report.in_flight.push(name.clone());
            continue;
        }
        if total <= max_bytes {
            continue;
        }
        match fs::remove_file(dir.join(name)) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        total -= bytes;
        report.evicted.push(GcEntry { file: name.clone(), bytes: *bytes });
    }
    report.bytes_after = total;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::killed_kernel::KillingSet;
    use crate::walk_laws::lace;

    fn walk() -> (IncrementLaw, KilledWalk) {
        let law = lace();
        let w = KilledWalk::new(&law, &KillingSet::origin(), Window::new(-30, 30), Execution::Sequential);
        (law, w)
    }

    #[test]
    fn second_lookup_hits() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TableCache::open(dir.path()).unwrap();
        let (law, w) = walk();
        let a = cache.get_or_build(&law, &w, -1, 20).unwrap();
        let b = cache.get_or_build(&law, &w, -1, 20).unwrap();
        assert_eq!(cache.stats().builds, 1);
        assert_eq!(cache.stats().hits, 1);
        for k in 0..=20 {
            for x in -30..=30 {
                assert_eq!(a.get(k, x).to_bits(), b.get(k, x).to_bits());
            }
        }
    }

    #[test]
    fn corrupt_file_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TableCache::open(dir.path()).unwrap();
        let (law, w) = walk();
        cache.get_or_build(&law, &w, -1, 10).unwrap();
        let path = cache.path_for(&law, &w, -1, 10);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x55;
        fs::write(&path, bytes).unwrap();
        cache.get_or_build(&law, &w, -1, 10).unwrap();
        let s = cache.stats();
        assert_eq!((s.builds, s.quarantined), (2, 1));
        assert_eq!(fs::read_dir(dir.path().join("quarantine")).unwrap().count(), 1);
    }

    #[test]
    fn gc_policy() {
        let dir = tempfile::tempdir().unwrap();
        assert!(cache_gc(dir.path(), 0).unwrap().evicted.is_empty());
        let cache = TableCache::open(dir.path()).unwrap();
        let (law, w) = walk();
        for y in [-1, -2, -3] {
            cache.get_or_build(&law, &w, y, 10).unwrap();
        }
        let r = cache_gc(dir.path(), u64::MAX).unwrap();
        assert!(r.evicted.is_empty());
        let busy = cache.path_for(&law, &w, -2, 10);
        fs::write(busy.with_extension("lock"), b"").unwrap();
        let r = cache_gc(dir.path(), 0).unwrap();
        assert_eq!(r.evicted.len(), 2);
        assert_eq!(r.in_flight.len(), 1);
        assert!(busy.exists());
    }
}
