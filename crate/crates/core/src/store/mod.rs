//! `NARB1` store of layer-wise span activations.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "NARB1"            5 bytes magic
//! version            u16 (= 1)
//! meta length        u32
//! meta               UTF-8 JSON (StoreMeta)
//! record count       u64
//! index entries      u16 key length | UTF-8 key "doc:start:end" | u64 payload offset
//! payload            f32 values, records in index order
//! ```
//!
//! Offsets are relative to the start of the payload. Index entries are
//! sorted by key bytes. A pooled record is `n_layers x dim` values; with
//! `pooling = tokens` it is `n_layers x span_len x dim` (layer-major), the
//! span length being read off the key.

mod mix;
mod pooling;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::Span;
use crate::{NarbError, Result};

pub use mix::{scalar_mix, scalar_mix_backward, softmax, ScalarMixParams};
pub use pooling::{pool_span, TokenStates};

pub const MAGIC: &[u8; 5] = b"NARB1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
    LastToken,
    Tokens,
}

impl std::str::FromStr for Pooling {
    type Err = NarbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            "last" | "last_token" => Ok(Pooling::LastToken),
            "tokens" => Ok(Pooling::Tokens),
            _ => Err(NarbError::InvalidArgument(format!("unknown pooling `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub model_id: String,
    /// Includes the embedding layer output as layer 0.
    pub n_layers: usize,
    pub dim: usize,
    pub pooling: Pooling,
    pub dtype: String,
}

impl StoreMeta {
    pub fn new(model_id: impl Into<String>, n_layers: usize, dim: usize, pooling: Pooling) -> Self {
        StoreMeta {
            model_id: model_id.into(),
            n_layers,
            dim,
            pooling,
            dtype: "float32".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.dim == 0 {
            return Err(NarbError::Shape(format!(
                "n_layers={} dim={} must both be >= 1",
                self.n_layers, self.dim
            )));
        }
        if self.dtype != "float32" {
            return Err(NarbError::CorruptStore(format!("unsupported dtype `{}`", self.dtype)));
        }
        Ok(())
    }

    /// Rows stored per layer for a span.
    pub fn rows(&self, span: &Span) -> usize {
        match self.pooling {
            Pooling::Tokens => span.len(),
            _ => 1,
        }
    }

    pub fn record_len(&self, span: &Span) -> usize {
        self.n_layers * self.rows(span) * self.dim
    }
}

/// One span's activations, layer-major: `values[(l * rows + r) * dim + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanEmbedding {
    pub span: Span,
    pub values: Vec<f32>,
}

impl SpanEmbedding {
    /// Row `row` of layer `layer` (row is always 0 for pooled stores).
    pub fn row<'a>(&'a self, meta: &StoreMeta, layer: usize, row: usize) -> &'a [f32] {
        let rows = meta.rows(&self.span);
        let at = (layer * rows + row) * meta.dim;
        &self.values[at..at + meta.dim]
    }

    pub fn layer<'a>(&'a self, meta: &StoreMeta, layer: usize) -> &'a [f32] {
        self.row(meta, layer, 0)
    }

    fn check(&self, meta: &StoreMeta) -> Result<()> {
        let want = meta.record_len(&self.span);
        if self.values.len() != want {
            return Err(NarbError::Shape(format!(
                "record {} has {} values, meta implies {want}",
                self.span.key(),
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(NarbError::NonFinite {
                layer: i / (meta.rows(&self.span) * meta.dim),
                key: self.span.key(),
            });
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> NarbError + '_ {
    move |e| NarbError::io(path, e)
}

/// Writes a store. Records are sorted by key so equal inputs give
/// byte-identical files.
pub fn store_write(meta: &StoreMeta, records: impl IntoIterator<Item = SpanEmbedding>, path: &Path) -> Result<()> {
    meta.validate()?;
    let mut sorted: BTreeMap<String, SpanEmbedding> = BTreeMap::new();
    for r in records {
        r.check(meta)?;
        let key = r.span.key();
        if key.len() > u16::MAX as usize {
            return Err(NarbError::InvalidData(format!("key too long: {key}")));
        }
        if sorted.insert(key.clone(), r).is_some() {
            return Err(NarbError::DuplicateKey(key));
        }
    }

    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let meta_json = serde_json::to_vec(meta)?;
    w.write_all(MAGIC).map_err(io_err(path))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&meta_json).map_err(io_err(path))?;
    w.write_all(&(sorted.len() as u64).to_le_bytes()).map_err(io_err(path))?;
    let mut offset = 0u64;
    for (key, rec) in &sorted {
        w.write_all(&(key.len() as u16).to_le_bytes()).map_err(io_err(path))?;
        w.write_all(key.as_bytes()).map_err(io_err(path))?;
        w.write_all(&offset.to_le_bytes()).map_err(io_err(path))?;
        offset += rec.values.len() as u64 * 4;
    }
    for rec in sorted.values() {
        for v in &rec.values {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// An opened store: header and index in memory, payload read on demand.
#[derive(Debug)]
pub struct EmbedStore {
    path: PathBuf,
    meta: StoreMeta,
    index: BTreeMap<String, (Span, u64)>,
    payload_start: u64,
    file: Mutex<File>,
    decoded: AtomicUsize,
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| NarbError::CorruptStore(format!("truncated while reading {what}")))
}

impl EmbedStore {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let file_len = file.metadata().map_err(io_err(path))?.len();
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 5];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(NarbError::CorruptStore(format!("{}: bad magic", path.display())));
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        read_exact(&mut r, &mut b2, "version")?;
        let version = u16::from_le_bytes(b2);
        if version != VERSION {
            return Err(NarbError::CorruptStore(format!("unsupported version {version}")));
        }
        read_exact(&mut r, &mut b4, "meta length")?;
        let meta_len = u32::from_le_bytes(b4) as usize;
        if meta_len as u64 > file_len {
            return Err(NarbError::CorruptStore("meta length exceeds file".into()));
        }
        let mut meta_buf = vec![0u8; meta_len];
        read_exact(&mut r, &mut meta_buf, "meta")?;
        let meta: StoreMeta = serde_json::from_slice(&meta_buf)
            .map_err(|e| NarbError::CorruptStore(format!("meta: {e}")))?;
        meta.validate()?;
        read_exact(&mut r, &mut b8, "record count")?;
        let count = u64::from_le_bytes(b8);

        let mut index = BTreeMap::new();
        let mut header_len = 5 + 2 + 4 + meta_len as u64 + 8;
        let mut expected_offset = 0u64;
        let mut prev_key: Option<String> = None;
        for i in 0..count {
            read_exact(&mut r, &mut b2, "index")?;
            let klen = u16::from_le_bytes(b2) as usize;
            let mut kbuf = vec![0u8; klen];
            read_exact(&mut r, &mut kbuf, "index key")?;
            let key = String::from_utf8(kbuf)
                .map_err(|_| NarbError::CorruptStore(format!("index entry {i}: key is not UTF-8")))?;
            read_exact(&mut r, &mut b8, "index offset")?;
            let offset = u64::from_le_bytes(b8);
            let span = Span::parse_key(&key)
                .map_err(|_| NarbError::CorruptStore(format!("index entry {i}: bad key `{key}`")))?;
            if offset != expected_offset {
                return Err(NarbError::CorruptStore(format!(
                    "index entry {i} (`{key}`): offset {offset}, expected {expected_offset}"
                )));
            }
            if prev_key.as_ref().is_some_and(|p| p.as_str() >= key.as_str()) {
                return Err(NarbError::CorruptStore(format!("index entry {i}: keys not sorted")));
            }
            expected_offset += meta.record_len(&span) as u64 * 4;
            header_len += 2 + klen as u64 + 8;
            prev_key = Some(key.clone());
            index.insert(key, (span, offset));
        }
        if header_len + expected_offset != file_len {
            return Err(NarbError::CorruptStore(format!(
                "payload is {} bytes, index implies {expected_offset}",
                file_len.saturating_sub(header_len)
            )));
        }
        Ok(EmbedStore {
            path: path.to_path_buf(),
            meta,
            index,
            payload_start: header_len,
            file: Mutex::new(r.into_inner()),
            decoded: AtomicUsize::new(0),
        })
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, span: &Span) -> bool {
        self.index.contains_key(&span.key())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// Number of payload records decoded since opening.
    pub fn records_decoded(&self) -> usize {
        self.decoded.load(Ordering::Relaxed)
    }

    /// Reads one record, touching only its byte range.
    pub fn get(&self, span: &Span) -> Result<SpanEmbedding> {
        let key = span.key();
        let (span, offset) = self.index.get(&key).ok_or(NarbError::MissingKey(key))?;
        let n = self.meta.record_len(span);
        let mut buf = vec![0u8; n * 4];
        {
            let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
            f.seek(SeekFrom::Start(self.payload_start + offset))
                .map_err(io_err(&self.path))?;
            read_exact(&mut *f, &mut buf, "payload")?;
        }
        self.decoded.fetch_add(1, Ordering::Relaxed);
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let rec = SpanEmbedding {
            span: span.clone(),
            values,
        };
        rec.check(&self.meta)?;
        Ok(rec)
    }

    pub fn read_all(&self) -> Result<Vec<SpanEmbedding>> {
        self.index.values().map(|(s, _)| self.get(s)).collect()
    }
}

/// Opens `path` and returns the meta plus the requested records (all when
/// `keys` is `None`).
pub fn store_read(path: &Path, keys: Option<&[Span]>) -> Result<(StoreMeta, Vec<SpanEmbedding>)> {
    let store = EmbedStore::open(path)?;
    let records = match keys {
        Some(keys) => keys.iter().map(|k| store.get(k)).collect::<Result<_>>()?,
        None => store.read_all()?,
    };
    Ok((store.meta.clone(), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(doc: &str, s: usize, e: usize, meta: &StoreMeta, base: f32) -> SpanEmbedding {
        let span = Span::new(doc, s, e).unwrap();
        let n = meta.record_len(&span);
        SpanEmbedding {
            span,
            values: (0..n).map(|i| base + i as f32 * 0.5).collect(),
        }
    }

    #[test]
    fn write_read_three_records() {
        let meta = StoreMeta::new("m", 3, 4, Pooling::Mean);
        let recs = vec![rec("b", 0, 2, &meta, 1.0), rec("a", 5, 9, &meta, -2.0), rec("a", 10, 12, &meta, 0.25)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        store_write(&meta, recs.clone(), &p).unwrap();
        let (m, mut back) = store_read(&p, None).unwrap();
        assert_eq!(m, meta);
        let mut want = recs;
        want.sort_by_key(|r| r.span.key());
        back.sort_by_key(|r| r.span.key());
        assert_eq!(back, want);
    }

    #[test]
    fn empty_store_is_valid() {
        let meta = StoreMeta::new("m", 1, 1, Pooling::Max);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        store_write(&meta, Vec::new(), &p).unwrap();
        let s = EmbedStore::open(&p).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn header_bytes_are_exact() {
        let meta = StoreMeta::new("m", 1, 1, Pooling::Mean);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        store_write(&meta, vec![rec("d", 0, 1, &meta, 1.5)], &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let meta_json = serde_json::to_vec(&meta).unwrap();
        let mut want = b"NARB1".to_vec();
        want.extend(1u16.to_le_bytes());
        want.extend((meta_json.len() as u32).to_le_bytes());
        want.extend(&meta_json);
        want.extend(1u64.to_le_bytes());
        want.extend(5u16.to_le_bytes());
        want.extend(b"d:0:1");
        want.extend(0u64.to_le_bytes());
        want.extend(1.5f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn payload_size_arithmetic() {
        // 872 narratives x 17 layers x d=2048 floats
        let meta = StoreMeta::new("m", 17, 2048, Pooling::Mean);
        let span = Span::new("n", 0, 120).unwrap();
        assert_eq!(meta.record_len(&span) * 4 * 872, 872 * 17 * 2048 * 4);
        // token-level stores scale with span length
        let tok = StoreMeta::new("m", 17, 8, Pooling::Tokens);
        assert_eq!(tok.record_len(&span), 17 * 120 * 8);
    }

    #[test]
    fn subset_read_decodes_only_requested() {
        let meta = StoreMeta::new("m", 2, 3, Pooling::Mean);
        let recs: Vec<_> = (0..1000).map(|i| rec("doc", i, i + 1, &meta, i as f32)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        store_write(&meta, recs.clone(), &p).unwrap();
        let s = EmbedStore::open(&p).unwrap();
        let got = s.get(&Span::new("doc", 500, 501).unwrap()).unwrap();
        assert_eq!(s.records_decoded(), 1);
        assert_eq!(got, recs[500]);
    }

    #[test]
    fn missing_key_is_named() {
        let meta = StoreMeta::new("m", 1, 2, Pooling::Mean);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        store_write(&meta, vec![rec("d", 0, 1, &meta, 0.0)], &p).unwrap();
        let s = EmbedStore::open(&p).unwrap();
        match s.get(&Span::new("d", 3, 4).unwrap()) {
            Err(NarbError::MissingKey(k)) => assert_eq!(k, "d:3:4"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_errors() {
        let meta = StoreMeta::new("m", 2, 2, Pooling::Mean);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        let bad = SpanEmbedding {
            span: Span::new("d", 0, 1).unwrap(),
            values: vec![0.0; 3],
        };
        assert!(matches!(store_write(&meta, vec![bad], &p), Err(NarbError::Shape(_))));
        let r = rec("d", 0, 1, &meta, 0.0);
        assert!(matches!(
            store_write(&meta, vec![r.clone(), r], &p),
            Err(NarbError::DuplicateKey(_))
        ));
        let mut nan = rec("d", 0, 1, &meta, 0.0);
        nan.values[3] = f32::NAN;
        assert!(matches!(
            store_write(&meta, vec![nan], &p),
            Err(NarbError::NonFinite { layer: 1, .. })
        ));
    }

    #[test]
    fn corruption_is_detected() {
        let meta = StoreMeta::new("m", 1, 2, Pooling::Mean);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        store_write(&meta, vec![rec("d", 0, 1, &meta, 0.0), rec("d", 1, 2, &meta, 1.0)], &p).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&p, &bad_magic).unwrap();
        assert!(matches!(EmbedStore::open(&p), Err(NarbError::CorruptStore(_))));

        let truncated = &good[..good.len() - 3];
        std::fs::write(&p, truncated).unwrap();
        assert!(matches!(EmbedStore::open(&p), Err(NarbError::CorruptStore(_))));

        // second index entry's offset: last 8 bytes before the 16-byte payload
        let mut bad_offset = good.clone();
        let at = good.len() - 16 - 8;
        bad_offset[at] = 9;
        std::fs::write(&p, &bad_offset).unwrap();
        assert!(matches!(EmbedStore::open(&p), Err(NarbError::CorruptStore(_))));
    }

    #[test]
    fn token_store_round_trip() {
        let meta = StoreMeta::new("m", 2, 3, Pooling::Tokens);
        let r = rec("d", 4, 7, &meta, 0.0);
        assert_eq!(r.values.len(), 2 * 3 * 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.narb");
        store_write(&meta, vec![r.clone()], &p).unwrap();
        let s = EmbedStore::open(&p).unwrap();
        let back = s.get(&r.span).unwrap();
        assert_eq!(back.row(&meta, 1, 2), &r.values[15..18]);
    }

    proptest! {
        #[test]
        fn round_trip_identity(n_layers in 1usize..4, dim in 1usize..5,
                               spans in proptest::collection::btree_set((0usize..50, 1usize..4), 0..20),
                               scale in -10.0f32..10.0) {
            let meta = StoreMeta::new("m", n_layers, dim, Pooling::Mean);
            let mut recs: Vec<_> = spans.iter().enumerate()
                .map(|(i, &(s, l))| rec("doc", s, s + l, &meta, scale * i as f32))
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.narb");
            store_write(&meta, recs.clone(), &p).unwrap();
            let (m, back) = store_read(&p, None).unwrap();
            recs.sort_by_key(|r| r.span.key());
            prop_assert_eq!(m, meta);
            prop_assert_eq!(back, recs);
        }
    }
}
