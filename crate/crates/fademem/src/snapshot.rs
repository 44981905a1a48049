//! Binary snapshot persistence.
//!
//! Container layout: 8-byte magic `FADEMEM1`, format version (u32 LE), a
//! length-prefixed config block, the record array, the runtime-state block
//! (clock, counters, context window, operation log), and a trailing 64-bit
//! FNV-1a checksum over all prior bytes. Embeddings are stored as 32-bit
//! little-endian floats.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::config::EngineConfig;
use crate::dynamics::ContextWindow;
use crate::embedding::Embedding;
use crate::record::{Layer, MemoryId, MemoryRecord, Timestamp};
use crate::store::{LoggedOp, MemoryStore, StoreOp};
use crate::text::fnv1a64;

pub const MAGIC: &[u8; 8] = b"FADEMEM1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported snapshot version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("snapshot violates schema: {0}")]
    Schema(String),
}

// ── Encoding ────────────────────────────────────────────────────────

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            buf: Vec::with_capacity(4096),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn opt_str(&mut self, s: Option<&str>) {
        match s {
            Some(s) => {
                self.u8(1);
                self.str(s);
            }
            None => self.u8(0),
        }
    }

    fn embedding(&mut self, e: &Embedding) {
        self.u64(e.values().len() as u64);
        for &v in e.values() {
            self.f32(v);
        }
    }
}

fn encode_record(w: &mut Writer, r: &MemoryRecord) {
    w.u64(r.id.0);
    w.str(&r.content);
    w.embedding(&r.embedding);
    w.f64(r.anchor_strength);
    w.f64(r.anchor_time.days());
    w.f64(r.created_at.days());
    w.u64(r.access_times.len() as u64);
    for t in &r.access_times {
        w.f64(t.days());
    }
    w.u8(match r.layer {
        Layer::Lml => 0,
        Layer::Sml => 1,
    });
    w.f64(r.importance);
    w.f64(r.decay_scale);
    w.opt_str(r.category_label.as_deref());
}

fn encode_op(w: &mut Writer, op: &LoggedOp) {
    w.f64(op.at.days());
    match &op.op {
        StoreOp::Observe { text, category } => {
            w.u8(0);
            w.str(text);
            w.opt_str(category.as_deref());
        }
        StoreOp::Query { text, k } => {
            w.u8(1);
            w.str(text);
            w.u64(*k as u64);
        }
        StoreOp::Tick => w.u8(2),
    }
}

/// Serializes the store into the container format.
pub fn encode(store: &MemoryStore) -> Vec<u8> {
    let (config, records, context, clock, next_id, observed_total, event_log) = store.parts();

    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);

    let config_json = serde_json::to_vec(config).expect("config serializes");
    w.u64(config_json.len() as u64);
    w.buf.extend_from_slice(&config_json);

    w.u64(records.len() as u64);
    for record in records.values() {
        encode_record(&mut w, record);
    }

    w.f64(clock.days());
    w.u64(next_id);
    w.u64(observed_total);
    w.u64(context.entries().len() as u64);
    for e in context.entries() {
        w.embedding(e);
    }
    w.u64(event_log.len() as u64);
    for op in event_log {
        encode_op(&mut w, op);
    }

    let checksum = fnv1a64(&w.buf);
    w.u64(checksum);
    w.buf
}

// ── Decoding ────────────────────────────────────────────────────────

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.pos + n > self.bytes.len() {
            return Err(SnapshotError::Corrupt(format!(
                "unexpected end of payload at byte {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, SnapshotError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_prefixed(&mut self) -> Result<&'a [u8], SnapshotError> {
        let len = self.u64()? as usize;
        self.take(len)
    }

    fn str(&mut self) -> Result<String, SnapshotError> {
        let bytes = self.len_prefixed()?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| SnapshotError::Corrupt("invalid utf-8 in string".to_string()))
    }

    fn opt_str(&mut self) -> Result<Option<String>, SnapshotError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.str()?)),
            tag => Err(SnapshotError::Corrupt(format!("bad option tag {tag}"))),
        }
    }

    fn timestamp(&mut self) -> Result<Timestamp, SnapshotError> {
        let days = self.f64()?;
        if !days.is_finite() {
            return Err(SnapshotError::Schema("non-finite timestamp".to_string()));
        }
        Ok(Timestamp::new(days))
    }

    fn embedding(&mut self) -> Result<Embedding, SnapshotError> {
        let n = self.u64()? as usize;
        if n > self.bytes.len() {
            return Err(SnapshotError::Corrupt("embedding length overflow".to_string()));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(self.f32()?);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SnapshotError::Schema("non-finite embedding entry".to_string()));
        }
        let e = Embedding::from_raw(values);
        if (e.norm() - 1.0).abs() > 1e-6 {
            return Err(SnapshotError::Schema(format!(
                "embedding norm {} is not unit",
                e.norm()
            )));
        }
        Ok(e)
    }
}

fn decode_record(r: &mut Reader) -> Result<MemoryRecord, SnapshotError> {
    let id = MemoryId(r.u64()?);
    let content = r.str()?;
    let embedding = r.embedding()?;
    let anchor_strength = r.f64()?;
    let anchor_time = r.timestamp()?;
    let created_at = r.timestamp()?;
    let n_access = r.u64()? as usize;
    if n_access > r.bytes.len() {
        return Err(SnapshotError::Corrupt("access list overflow".to_string()));
    }
    let mut access_times = Vec::with_capacity(n_access);
    for _ in 0..n_access {
        access_times.push(r.timestamp()?);
    }
    let layer = match r.u8()? {
        0 => Layer::Lml,
        1 => Layer::Sml,
        tag => return Err(SnapshotError::Schema(format!("unknown layer tag {tag}"))),
    };
    let importance = r.f64()?;
    let decay_scale = r.f64()?;
    let category_label = r.opt_str()?;
    let record = MemoryRecord {
        id,
        content,
        embedding,
        anchor_strength,
        anchor_time,
        created_at,
        access_times,
        layer,
        importance,
        decay_scale,
        category_label,
    };
    record
        .check_invariants()
        .map_err(|e| SnapshotError::Schema(format!("record {id}: {e}")))?;
    Ok(record)
}

fn decode_op(r: &mut Reader) -> Result<LoggedOp, SnapshotError> {
    let at = r.timestamp()?;
    let op = match r.u8()? {
        0 => StoreOp::Observe {
            text: r.str()?,
            category: r.opt_str()?,
        },
        1 => StoreOp::Query {
            text: r.str()?,
            k: r.u64()? as usize,
        },
        2 => StoreOp::Tick,
        tag => return Err(SnapshotError::Corrupt(format!("unknown op tag {tag}"))),
    };
    Ok(LoggedOp { at, op })
}

/// Parses a snapshot. The embedded config governs the loaded store; ambient
/// defaults play no part.
pub fn decode(bytes: &[u8]) -> Result<MemoryStore, SnapshotError> {
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(SnapshotError::Corrupt("payload too short".to_string()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored_checksum = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a64(payload) != stored_checksum {
        return Err(SnapshotError::Corrupt("checksum mismatch".to_string()));
    }

    let mut r = Reader::new(payload);
    if r.take(MAGIC.len())? != MAGIC {
        return Err(SnapshotError::Corrupt("bad magic".to_string()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(SnapshotError::VersionMismatch { found: version });
    }

    let config_json = r.len_prefixed()?;
    let config: EngineConfig = serde_json::from_slice(config_json)
        .map_err(|e| SnapshotError::Schema(format!("config block: {e}")))?;
    let config = config
        .validate()
        .map_err(|e| SnapshotError::Schema(e.to_string()))?;

    let n_records = r.u64()? as usize;
    if n_records > payload.len() {
        return Err(SnapshotError::Corrupt("record count overflow".to_string()));
    }
    let mut records = BTreeMap::new();
    for _ in 0..n_records {
        let record = decode_record(&mut r)?;
        if records.contains_key(&record.id) {
            return Err(SnapshotError::Schema(format!("duplicate id {}", record.id)));
        }
        records.insert(record.id, record);
    }

    let clock = r.timestamp()?;
    let next_id = r.u64()?;
    let observed_total = r.u64()?;
    let n_ctx = r.u64()? as usize;
    if n_ctx > payload.len() {
        return Err(SnapshotError::Corrupt("context count overflow".to_string()));
    }
    let mut context = ContextWindow::new();
    for _ in 0..n_ctx {
        let e = r.embedding()?;
        context.push(e, n_ctx.max(1));
    }
    let n_ops = r.u64()? as usize;
    if n_ops > payload.len() {
        return Err(SnapshotError::Corrupt("op count overflow".to_string()));
    }
    let mut event_log = Vec::with_capacity(n_ops);
    for _ in 0..n_ops {
        event_log.push(decode_op(&mut r)?);
    }
    if r.pos != payload.len() {
        return Err(SnapshotError::Corrupt(format!(
            "{} trailing bytes after state block",
            payload.len() - r.pos
        )));
    }

    if records.keys().any(|id| id.0 >= next_id) {
        return Err(SnapshotError::Schema(
            "record id at or above next_id".to_string(),
        ));
    }

    Ok(MemoryStore::from_parts(
        config,
        records,
        context,
        clock,
        next_id,
        observed_total,
        event_log,
    ))
}

/// Writes atomically (temp file + rename) so concurrent readers never see a
/// half-written container.
pub fn save(store: &MemoryStore, path: &Path) -> Result<(), SnapshotError> {
    let bytes = encode(store);
    let tmp = path.with_extension("fmem.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MemoryStore, SnapshotError> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::oracle::RuleOracle;

    fn populated_store() -> MemoryStore {
        let embedder = HashEmbedder::default();
        let oracle = RuleOracle;
        let mut store = MemoryStore::new(EngineConfig::default());
        store
            .observe("alice visited the museum", Timestamp::new(0.0), &embedder, &oracle, &oracle)
            .unwrap();
        store
            .observe(
                "daily profile alice|preferred color hue|blue",
                Timestamp::new(0.5),
                &embedder,
                &oracle,
                &oracle,
            )
            .unwrap();
        store
            .query("museum visit", 2, Timestamp::new(1.0), &embedder)
            .unwrap();
        store.tick(Timestamp::new(2.0)).unwrap();
        store
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let store = populated_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.fmem");
        store.save_snapshot(&path).unwrap();
        let loaded = MemoryStore::load_snapshot(&path).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn encoding_is_deterministic() {
        let store = populated_store();
        assert_eq!(encode(&store), encode(&store));
    }

    #[test]
    fn container_starts_with_magic_and_version() {
        let bytes = encode(&populated_store());
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn truncated_payload_is_corrupt_not_partial() {
        let bytes = encode(&populated_store());
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, SnapshotError::Corrupt(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = encode(&populated_store());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, SnapshotError::Corrupt(_)), "{err}");
    }

    #[test]
    fn future_version_is_rejected_distinctly() {
        let mut bytes = encode(&populated_store());
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        // Re-stamp the checksum so only the version differs.
        let body_len = bytes.len() - 8;
        let checksum = fnv1a64(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&checksum.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, SnapshotError::VersionMismatch { found: 99 }), "{err}");
    }

    #[test]
    fn loaded_store_keeps_embedded_config() {
        let embedder = HashEmbedder::default();
        let oracle = RuleOracle;
        let custom = EngineConfig {
            lambda_base: 0.31,
            cap_sml: 7,
            ..EngineConfig::default()
        };
        let mut store = MemoryStore::new(custom.clone());
        store
            .observe("one fact", Timestamp::new(0.0), &embedder, &oracle, &oracle)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.fmem");
        store.save_snapshot(&path).unwrap();
        let loaded = MemoryStore::load_snapshot(&path).unwrap();
        assert_eq!(loaded.config(), &custom);
        assert_eq!(loaded.config().lambda_base, 0.31);
    }

    #[test]
    fn schema_violation_is_distinct_from_corruption() {
        // A structurally sound container holding a record with an
        // out-of-range strength must fail as a schema error.
        use crate::embedding::EmbeddingProvider;
        let embedder = HashEmbedder::default();
        let mut bad = MemoryRecord::new(
            MemoryId(0),
            "x".to_string(),
            embedder.embed("x").unwrap(),
            Timestamp::new(0.0),
            Layer::Sml,
            0.0,
        );
        bad.anchor_strength = 2.0;
        let mut records = BTreeMap::new();
        records.insert(bad.id, bad);
        let bad_store = MemoryStore::from_parts(
            EngineConfig::default(),
            records,
            ContextWindow::new(),
            Timestamp::new(0.0),
            1,
            1,
            Vec::new(),
        );
        let err = decode(&encode(&bad_store)).unwrap_err();
        assert!(matches!(err, SnapshotError::Schema(_)), "{err}");
    }
}
