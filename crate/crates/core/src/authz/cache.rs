//! Cache of authorized delegation paths, keyed by the input event they hang off.
//!
//! Every cached path carries an opaque snapshot of the graph that was shown to
//! the user plus a SHA-256 tag over it. The tag is recomputed on eviction and on
//! import so a tampered or truncated entry is never trusted.
//!
//! Export layout (little endian):
//!
//! ```text
//! magic "HOAC" | format u16 | cache version u64 | record count u32 |
//! { record length u32 | record }*
//!
//! record: widget u32 | program count u16 | program u32* | op u16 | sensor u16 |
//!         verdict u8 | entry version u64 | snapshot length u32 | snapshot |
//!         digest [u8; 32]
//! ```

use std::collections::BTreeMap;
use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{OperationId, ProgramId, SensorId, WidgetId};
use crate::graph::{InputKey, PathKey};

const MAGIC: &[u8; 4] = b"HOAC";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("corrupt cache blob: {0}")]
    CorruptCache(String),
}

fn corrupt(msg: impl Into<String>) -> CacheError {
    CacheError::CorruptCache(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CachedPath {
    verdict: Verdict,
    snapshot: Vec<u8>,
    digest: [u8; 32],
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct CacheEntry {
    paths: BTreeMap<PathKey, CachedPath>,
    version: u64,
}

/// Per-program and total serialized size of the cache.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub per_program: BTreeMap<ProgramId, usize>,
    pub total: usize,
}

impl Footprint {
    /// Mean bytes over `programs` programs, counting programs with no entries.
    pub fn mean_per_program(&self, programs: usize) -> f64 {
        if programs == 0 {
            0.0
        } else {
            self.total as f64 / programs as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuthorizationCache {
    entries: BTreeMap<InputKey, CacheEntry>,
    version: u64,
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl AuthorizationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(|e| e.paths.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, key: &PathKey) -> Option<Verdict> {
        self.entries
            .get(&key.input_key())
            .and_then(|e| e.paths.get(key))
            .map(|c| c.verdict)
    }

    /// Paths currently authorized under `input`.
    pub fn authorized_paths(&self, input: &InputKey) -> Vec<PathKey> {
        self.entries
            .get(input)
            .map(|e| {
                e.paths
                    .iter()
                    .filter(|(_, c)| c.verdict == Verdict::Allow)
                    .map(|(k, _)| k.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Cached paths under the same input that reach the same operation and
    /// sensor through a different chain of programs.
    pub fn superseded_by(&self, key: &PathKey) -> Vec<PathKey> {
        self.entries
            .get(&key.input_key())
            .map(|e| {
                e.paths
                    .keys()
                    .filter(|k| {
                        k.op == key.op && k.sensor == key.sensor && k.programs != key.programs
                    })
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn store(&mut self, key: PathKey, verdict: Verdict, snapshot: Vec<u8>) {
        let digest = digest(&snapshot);
        let entry = self.entries.entry(key.input_key()).or_default();
        entry.paths.insert(
            key,
            CachedPath {
                verdict,
                snapshot,
                digest,
            },
        );
        entry.version += 1;
        self.version += 1;
    }

    /// Removes one path after checking its snapshot still matches its tag.
    pub fn evict(&mut self, key: &PathKey) -> Result<bool, CacheError> {
        let input = key.input_key();
        let Some(entry) = self.entries.get_mut(&input) else {
            return Ok(false);
        };
        let Some(cached) = entry.paths.get(key) else {
            return Ok(false);
        };
        if digest(&cached.snapshot) != cached.digest {
            return Err(corrupt("snapshot does not match its digest"));
        }
        entry.paths.remove(key);
        entry.version += 1;
        if entry.paths.is_empty() {
            self.entries.remove(&input);
        }
        self.version += 1;
        Ok(true)
    }

    /// Drops everything cached under `input`.
    pub fn invalidate(&mut self, input: &InputKey) -> usize {
        match self.entries.remove(input) {
            Some(entry) => {
                self.version += 1;
                entry.paths.len()
            }
            None => 0,
        }
    }

    fn encode_record(key: &PathKey, cached: &CachedPath, version: u64, out: &mut Vec<u8>) {
        out.write_u32::<LittleEndian>(key.widget.0).unwrap();
        out.write_u16::<LittleEndian>(key.programs.len() as u16)
            .unwrap();
        for p in &key.programs {
            out.write_u32::<LittleEndian>(p.0).unwrap();
        }
        out.write_u16::<LittleEndian>(key.op.0).unwrap();
        out.write_u16::<LittleEndian>(key.sensor.0).unwrap();
        out.push(match cached.verdict {
            Verdict::Allow => 1,
            Verdict::Deny => 0,
        });
        out.write_u64::<LittleEndian>(version).unwrap();
        out.write_u32::<LittleEndian>(cached.snapshot.len() as u32)
            .unwrap();
        out.extend_from_slice(&cached.snapshot);
        out.extend_from_slice(&cached.digest);
    }

    fn records(&self) -> impl Iterator<Item = (&PathKey, Vec<u8>)> + '_ {
        self.entries.values().flat_map(|entry| {
            entry.paths.iter().map(move |(key, cached)| {
                let mut body = Vec::new();
                Self::encode_record(key, cached, entry.version, &mut body);
                (key, body)
            })
        })
    }

    pub fn export(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u64::<LittleEndian>(self.version).unwrap();
        out.write_u32::<LittleEndian>(self.len() as u32).unwrap();
        for (_, body) in self.records() {
            out.write_u32::<LittleEndian>(body.len() as u32).unwrap();
            out.extend_from_slice(&body);
        }
        out
    }

    pub fn import(bytes: &[u8]) -> Result<Self, CacheError> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let format = cur
            .read_u16::<LittleEndian>()
            .map_err(|_| corrupt("truncated header"))?;
        if format != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format {format}")));
        }
        let version = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| corrupt("truncated header"))?;
        let count = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt("truncated header"))?;
        let mut cache = AuthorizationCache {
            entries: BTreeMap::new(),
            version,
        };
        for i in 0..count {
            let len = cur
                .read_u32::<LittleEndian>()
                .map_err(|_| corrupt(format!("record {i}: missing length")))?
                as usize;
            let start = cur.position() as usize;
            let body = bytes
                .get(start..start + len)
                .ok_or_else(|| corrupt(format!("record {i}: truncated")))?;
            cur.set_position((start + len) as u64);
            let (key, cached, entry_version) =
                Self::decode_record(body).map_err(|e| corrupt(format!("record {i}: {e}")))?;
            let entry = cache.entries.entry(key.input_key()).or_default();
            entry.version = entry_version;
            entry.paths.insert(key, cached);
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(cache)
    }

    fn decode_record(body: &[u8]) -> Result<(PathKey, CachedPath, u64), String> {
        let short = |_| "truncated".to_string();
        let mut cur = Cursor::new(body);
        let widget = WidgetId(cur.read_u32::<LittleEndian>().map_err(short)?);
        let n = cur.read_u16::<LittleEndian>().map_err(short)?;
        if n == 0 {
            return Err("empty program chain".into());
        }
        let mut programs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            programs.push(ProgramId(cur.read_u32::<LittleEndian>().map_err(short)?));
        }
        let op = OperationId(cur.read_u16::<LittleEndian>().map_err(short)?);
        let sensor = SensorId(cur.read_u16::<LittleEndian>().map_err(short)?);
        let verdict = match cur.read_u8().map_err(short)? {
            1 => Verdict::Allow,
            0 => Verdict::Deny,
            other => return Err(format!("bad verdict byte {other}")),
        };
        let version = cur.read_u64::<LittleEndian>().map_err(short)?;
        let snap_len = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
        let start = cur.position() as usize;
        let snapshot = body
            .get(start..start + snap_len)
            .ok_or("truncated snapshot")?
            .to_vec();
        let tag: [u8; 32] = body
            .get(start + snap_len..)
            .filter(|rest| rest.len() == 32)
            .ok_or("bad digest length")?
            .try_into()
            .expect("length checked");
        if digest(&snapshot) != tag {
            return Err("digest mismatch".into());
        }
        Ok((
            PathKey {
                widget,
                programs,
                op,
                sensor,
            },
            CachedPath {
                verdict,
                snapshot,
                digest: tag,
            },
            version,
        ))
    }

    /// Serialized bytes attributable to each program: every record is charged
    /// to the program that received the input event.
    pub fn footprint(&self) -> Footprint {
        let mut fp = Footprint::default();
        for (key, body) in self.records() {
            let bytes = body.len() + 4;
            *fp.per_program.entry(key.programs[0]).or_default() += bytes;
            fp.total += bytes;
        }
        fp
    }
}
