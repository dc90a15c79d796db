//! Property vectors: building them from a model and persisting them.
//!
//! On-disk layout, all integers little-endian:
//!
//! ```text
//! "PVIX" | version u8
//! model_id str | dim u32 | use_description u8 | vocab_cap u64 (0 = none) | built_at u64 | count u32
//! count x { id str | label str | alias_count u32 | alias str... | has_vector u8 | dim x f32 }
//! crc32 u32 over every preceding byte
//! ```
//!
//! where `str` is a `u32` byte length followed by UTF-8.

use std::io::{self, Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::embeddings::EmbeddingModel;
use crate::ingest::{tokenize, PropertyId, PropertyRecord, Stopwords};

pub const MAGIC: &[u8; 4] = b"PVIX";
pub const FORMAT_VERSION: u8 = 1;

const MAX_STRING_BYTES: u32 = 1 << 20;
const MAX_DIM: u32 = 1 << 16;
const MAX_ALIASES: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build index: {0}")]
    Build(String),
    #[error("invalid index: {0}")]
    Invalid(String),
    #[error("not a property index: {0}")]
    Format(String),
    #[error("corrupt index at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },
    #[error("index i/o failed: {0}")]
    Io(#[from] io::Error),
}

/// One property as stored in the index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: PropertyId,
    pub label: String,
    pub aliases: Vec<String>,
    /// `None` when no label (or description) token is in the model vocabulary.
    pub vector: Option<Vec<f32>>,
}

/// Build-time settings recorded in the index header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMeta {
    pub model_id: String,
    pub dim: usize,
    pub use_description: bool,
    /// Vocabulary truncation of the model the index was built with.
    pub vocab_cap: Option<usize>,
    /// Seconds since the Unix epoch.
    pub built_at: u64,
}

/// Immutable property-vector table, sorted by property id.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyIndex {
    meta: IndexMeta,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildConfig {
    pub use_description: bool,
    pub built_at: u64,
}

impl BuildConfig {
    /// Stamps the current time.
    pub fn now(use_description: bool) -> Self {
        let built_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            use_description,
            built_at,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub entries: usize,
    /// Properties none of whose tokens are in the model vocabulary.
    pub without_vector: Vec<PropertyId>,
}

/// Tokens that make up a property's vector.
pub fn property_tokens(
    record: &PropertyRecord,
    use_description: bool,
    stopwords: &Stopwords,
) -> Vec<String> {
    let mut tokens = tokenize(&record.label, stopwords);
    if use_description {
        if let Some(description) = &record.description {
            tokens.extend(tokenize(description, stopwords));
        }
    }
    tokens
}

/// Embeds every property as the sum of its label (and optionally
/// description) word vectors.
pub fn build_index(
    model: &EmbeddingModel,
    properties: &[PropertyRecord],
    stopwords: &Stopwords,
    config: BuildConfig,
) -> Result<(PropertyIndex, BuildReport), IndexError> {
    if model.dim() == 0 {
        return Err(IndexError::Build("model has zero dimensions".into()));
    }
    if properties.is_empty() {
        return Err(IndexError::Build("no properties to index".into()));
    }

    let mut entries: Vec<IndexEntry> = properties
        .iter()
        .map(|record| {
            let tokens = property_tokens(record, config.use_description, stopwords);
            IndexEntry {
                id: record.id,
                label: record.label.clone(),
                aliases: record.aliases.clone(),
                vector: model.phrase_vector(&tokens).map(|v| v.into_inner()),
            }
        })
        .collect();
    entries.sort_by_key(|e| e.id);
    if let Some(pair) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(IndexError::Build(format!("duplicate property {}", pair[0].id)));
    }

    let report = BuildReport {
        entries: entries.len(),
        without_vector: entries
            .iter()
            .filter(|e| e.vector.is_none())
            .map(|e| e.id)
            .collect(),
    };
    if !report.without_vector.is_empty() {
        log::info!(
            "{} of {} properties have no in-vocabulary tokens",
            report.without_vector.len(),
            report.entries
        );
    }

    let meta = IndexMeta {
        model_id: model.model_id().to_owned(),
        dim: model.dim(),
        use_description: config.use_description,
        vocab_cap: model.max_words(),
        built_at: config.built_at,
    };
    Ok((PropertyIndex { meta, entries }, report))
}

impl PropertyIndex {
    /// Assembles an index from parts, sorting entries and checking invariants.
    pub fn from_parts(meta: IndexMeta, mut entries: Vec<IndexEntry>) -> Result<Self, IndexError> {
        entries.sort_by_key(|e| e.id);
        validate(&meta, &entries).map_err(IndexError::Invalid)?;
        Ok(Self { meta, entries })
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    pub fn model_id(&self) -> &str {
        &self.meta.model_id
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn use_description(&self) -> bool {
        self.meta.use_description
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, id: PropertyId) -> Option<usize> {
        self.entries.binary_search_by_key(&id, |e| e.id).ok()
    }

    pub fn entry(&self, id: PropertyId) -> Option<&IndexEntry> {
        self.position(id).map(|i| &self.entries[i])
    }

    /// Records as seen by the index: descriptions are not kept.
    pub fn records(&self) -> Vec<PropertyRecord> {
        self.entries
            .iter()
            .map(|e| PropertyRecord {
                id: e.id,
                label: e.label.clone(),
                description: None,
                aliases: e.aliases.clone(),
            })
            .collect()
    }

    /// Writes the binary form and returns the number of bytes written.
    pub fn save<W: Write>(&self, sink: W) -> Result<u64, IndexError> {
        let mut out = Sink::new(sink);
        out.bytes(MAGIC)?;
        out.bytes(&[FORMAT_VERSION])?;
        out.string(&self.meta.model_id)?;
        out.u32(self.meta.dim as u32)?;
        out.bytes(&[u8::from(self.meta.use_description)])?;
        out.u64(self.meta.vocab_cap.map_or(0, |cap| cap as u64))?;
        out.u64(self.meta.built_at)?;
        out.u32(self.entries.len() as u32)?;
        for entry in &self.entries {
            out.string(&entry.id.to_string())?;
            out.string(&entry.label)?;
            out.u32(entry.aliases.len() as u32)?;
            for alias in &entry.aliases {
                out.string(alias)?;
            }
            match &entry.vector {
                Some(vector) => {
                    out.bytes(&[1])?;
                    let mut buf = Vec::with_capacity(vector.len() * 4);
                    for c in vector {
                        buf.extend_from_slice(&c.to_le_bytes());
                    }
                    out.bytes(&buf)?;
                }
                None => out.bytes(&[0])?,
            }
        }
        out.finish()
    }

    /// Reads the binary form written by [`PropertyIndex::save`].
    pub fn load<R: Read>(source: R) -> Result<Self, IndexError> {
        let mut src = Source::new(source);
        let mut magic = [0u8; 4];
        src.fill(&mut magic)
            .map_err(|_| IndexError::Format("stream too short for magic bytes".into()))?;
        if &magic != MAGIC {
            return Err(IndexError::Format(format!("bad magic {magic:?}")));
        }
        let version = src.u8()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }

        let model_id = src.string()?;
        let dim = src.u32()?;
        if dim == 0 || dim > MAX_DIM {
            return Err(src.corrupt(format!("implausible dimension {dim}")));
        }
        let use_description = src.flag()?;
        let vocab_cap = match src.u64()? {
            0 => None,
            cap => Some(cap as usize),
        };
        let built_at = src.u64()?;
        let count = src.u32()?;

        let dim = dim as usize;
        let mut entries = Vec::with_capacity((count as usize).min(1 << 16));
        for _ in 0..count {
            let raw_id = src.string()?;
            let id: PropertyId = raw_id
                .parse()
                .map_err(|_| src.corrupt(format!("invalid property id {raw_id:?}")))?;
            let label = src.string()?;
            let alias_count = src.u32()?;
            if alias_count > MAX_ALIASES {
                return Err(src.corrupt(format!("implausible alias count {alias_count}")));
            }
            let aliases = (0..alias_count)
                .map(|_| src.string())
                .collect::<Result<Vec<_>, _>>()?;
            let vector = if src.flag()? {
                let mut raw = vec![0u8; dim * 4];
                src.fill(&mut raw)?;
                Some(
                    raw.chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect::<Vec<_>>(),
                )
            } else {
                None
            };
            entries.push(IndexEntry {
                id,
                label,
                aliases,
                vector,
            });
        }

        let computed = src.hasher.clone().finalize();
        let stored = src.u32()?;
        if stored != computed {
            return Err(src.corrupt(format!(
                "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
            )));
        }
        let mut probe = [0u8; 1];
        if src.inner.read(&mut probe)? != 0 {
            return Err(src.corrupt("trailing bytes after checksum".into()));
        }

        let meta = IndexMeta {
            model_id,
            dim,
            use_description,
            vocab_cap,
            built_at,
        };
        validate(&meta, &entries).map_err(|message| IndexError::Corrupt {
            offset: src.offset,
            message,
        })?;
        Ok(Self { meta, entries })
    }

    /// Line-oriented dump for inspection: id, label and the first four
    /// vector components (`-` when the vector is absent).
    pub fn export_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "# model={} dim={} use_description={} entries={}",
            self.meta.model_id,
            self.meta.dim,
            self.meta.use_description,
            self.entries.len()
        )?;
        for entry in &self.entries {
            let head = match &entry.vector {
                Some(v) => v
                    .iter()
                    .take(4)
                    .map(|c| format!("{c:.6}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                None => "-".to_owned(),
            };
            writeln!(out, "{}\t{}\t{}", entry.id, entry.label, head)?;
        }
        out.flush()
    }
}

fn validate(meta: &IndexMeta, entries: &[IndexEntry]) -> Result<(), String> {
    if meta.dim == 0 {
        return Err("dimension must be positive".into());
    }
    if let Some(pair) = entries.windows(2).find(|w| w[0].id >= w[1].id) {
        return Err(format!("entries out of order or duplicated at {}", pair[1].id));
    }
    for entry in entries {
        if let Some(v) = &entry.vector {
            if v.len() != meta.dim {
                return Err(format!("{} has {} components, expected {}", entry.id, v.len(), meta.dim));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(format!("{} has a non-finite component", entry.id));
            }
        }
    }
    Ok(())
}

struct Sink<W> {
    inner: W,
    written: u64,
    hasher: crc32fast::Hasher,
}

impl<W: Write> Sink<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            written: 0,
            hasher: crc32fast::Hasher::new(),
        }
    }

    fn bytes(&mut self, data: &[u8]) -> io::Result<()> {
        self.hasher.update(data);
        self.inner.write_all(data)?;
        self.written += data.len() as u64;
        Ok(())
    }

    fn u32(&mut self, value: u32) -> io::Result<()> {
        self.bytes(&value.to_le_bytes())
    }

    fn u64(&mut self, value: u64) -> io::Result<()> {
        self.bytes(&value.to_le_bytes())
    }

    fn string(&mut self, value: &str) -> Result<(), IndexError> {
        let len = u32::try_from(value.len())
            .ok()
            .filter(|&len| len <= MAX_STRING_BYTES)
            .ok_or_else(|| IndexError::Invalid(format!("string of {} bytes too long", value.len())))?;
        self.u32(len)?;
        self.bytes(value.as_bytes())?;
        Ok(())
    }

    fn finish(mut self) -> Result<u64, IndexError> {
        let crc = self.hasher.clone().finalize();
        self.inner.write_all(&crc.to_le_bytes())?;
        self.inner.flush()?;
        Ok(self.written + 4)
    }
}

struct Source<R> {
    inner: R,
    offset: u64,
    hasher: crc32fast::Hasher,
}

impl<R: Read> Source<R> {
    fn new(inner: R) -> Self {
        Self {
            inner,
            offset: 0,
            hasher: crc32fast::Hasher::new(),
        }
    }

    fn corrupt(&self, message: String) -> IndexError {
        IndexError::Corrupt {
            offset: self.offset,
            message,
        }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<(), IndexError> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.hasher.update(buf);
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(self.corrupt(format!(
                "truncated stream, needed {} more bytes",
                buf.len()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    fn flag(&mut self) -> Result<bool, IndexError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(self.corrupt(format!("invalid flag byte {other}"))),
        }
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()?;
        if len > MAX_STRING_BYTES {
            return Err(self.corrupt(format!("implausible string length {len}")));
        }
        let mut buf = vec![0u8; len as usize];
        self.fill(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.corrupt("invalid UTF-8 in string".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: u32, label: &str, description: Option<&str>, aliases: &[&str]) -> PropertyRecord {
        PropertyRecord {
            id: PropertyId::new(id),
            label: label.into(),
            description: description.map(Into::into),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        }
    }

    fn toy_model() -> EmbeddingModel {
        EmbeddingModel::from_rows(
            "toy",
            vec![
                ("end", vec![1.0, 0.0]),
                ("time", vec![0.0, 1.0]),
                ("item", vec![0.5, 0.25]),
                ("exist", vec![-1.0, 3.0]),
            ],
        )
        .unwrap()
    }

    const FIXED: BuildConfig = BuildConfig {
        use_description: false,
        built_at: 1_500_000_000,
    };

    #[test]
    fn label_vector_is_sum_of_word_rows() {
        let props = [record(582, "end time", None, &["divorced", "to"])];
        let (index, report) = build_index(&toy_model(), &props, &Stopwords::english(), FIXED).unwrap();
        assert_eq!(index.entries()[0].vector.as_deref(), Some(&[1.0, 1.0][..]));
        assert!(report.without_vector.is_empty());
        assert_eq!(index.entries()[0].aliases, ["divorced", "to"]);
    }

    #[test]
    fn all_oov_label_keeps_entry_without_vector() {
        let props = [record(1, "zzz qqq", None, &["x"]), record(2, "end", None, &[])];
        let (index, report) = build_index(&toy_model(), &props, &Stopwords::english(), FIXED).unwrap();
        assert_eq!(index.len(), 2);
        assert!(index.entry(PropertyId::new(1)).unwrap().vector.is_none());
        assert_eq!(report.without_vector, [PropertyId::new(1)]);
    }

    #[test]
    fn description_changes_vector() {
        let props = [record(582, "end time", Some("time an item ceases to exist"), &[])];
        let stop = Stopwords::english();
        let (without, _) = build_index(&toy_model(), &props, &stop, FIXED).unwrap();
        let with_config = BuildConfig {
            use_description: true,
            ..FIXED
        };
        let (with, _) = build_index(&toy_model(), &props, &stop, with_config).unwrap();
        // label: end + time; description adds time + item + exist ("ceases" is OOV)
        let expected_with = [1.0 + 0.0 + 0.5 - 1.0, 1.0 + 1.0 + 0.25 + 3.0];
        assert_eq!(without.entries()[0].vector.as_deref(), Some(&[1.0, 1.0][..]));
        assert_eq!(with.entries()[0].vector.as_deref(), Some(&expected_with[..]));
        assert!(with.use_description());
        assert!(!without.use_description());
    }

    #[test]
    fn build_errors() {
        let stop = Stopwords::english();
        assert!(matches!(
            build_index(&toy_model(), &[], &stop, FIXED),
            Err(IndexError::Build(_))
        ));
        let dup = [record(1, "end", None, &[]), record(1, "time", None, &[])];
        assert!(matches!(
            build_index(&toy_model(), &dup, &stop, FIXED),
            Err(IndexError::Build(_))
        ));
    }

    #[test]
    fn build_is_order_independent() {
        let stop = Stopwords::english();
        let mut props = vec![
            record(10, "time", None, &[]),
            record(2, "end time", None, &["x"]),
            record(7, "item", None, &[]),
        ];
        let (a, _) = build_index(&toy_model(), &props, &stop, FIXED).unwrap();
        props.reverse();
        let (b, _) = build_index(&toy_model(), &props, &stop, FIXED).unwrap();
        assert_eq!(a, b);
        let ids: Vec<u32> = a.entries().iter().map(|e| e.id.number()).collect();
        assert_eq!(ids, [2, 7, 10]);
    }

    fn toy_index() -> PropertyIndex {
        let props = [
            record(582, "end time", None, &["divorced", "to"]),
            record(580, "start time", None, &["from"]),
            record(9, "qqq", None, &[]),
        ];
        build_index(&toy_model(), &props, &Stopwords::english(), FIXED).unwrap().0
    }

    #[test]
    fn save_load_round_trip() {
        let index = toy_index();
        let mut buf = Vec::new();
        let written = index.save(&mut buf).unwrap();
        assert_eq!(written, buf.len() as u64);
        assert_eq!(PropertyIndex::load(&buf[..]).unwrap(), index);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut buf = Vec::new();
        toy_index().save(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(PropertyIndex::load(&bad[..]), Err(IndexError::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(PropertyIndex::load(&bad[..]), Err(IndexError::Format(_))));
        assert!(matches!(PropertyIndex::load(&b"PV"[..]), Err(IndexError::Format(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corruption() {
        let mut buf = Vec::new();
        toy_index().save(&mut buf).unwrap();
        for cut in [5, 20, buf.len() / 2, buf.len() - 1] {
            assert!(
                matches!(PropertyIndex::load(&buf[..cut]), Err(IndexError::Corrupt { .. })),
                "cut at {cut}"
            );
        }
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(PropertyIndex::load(&long[..]), Err(IndexError::Corrupt { .. })));
    }

    #[test]
    fn flipped_vector_byte_fails_checksum() {
        let mut buf = Vec::new();
        toy_index().save(&mut buf).unwrap();
        let at = buf.len() - 10;
        buf[at] ^= 0x01;
        assert!(matches!(PropertyIndex::load(&buf[..]), Err(IndexError::Corrupt { .. })));
    }

    #[test]
    fn file_size_for_full_property_set() {
        // 3323 properties x 300 dims
        let model = EmbeddingModel::from_rows(
            "big",
            (0..300).map(|i| (format!("w{i}"), (0..300).map(|j| ((i + j) % 7) as f32).collect())),
        )
        .unwrap();
        let props: Vec<PropertyRecord> = (1..=3323)
            .map(|i| record(i, &format!("w{} w{}", i % 300, (i * 7) % 300), None, &["some alias"]))
            .collect();
        let (index, _) = build_index(&model, &props, &Stopwords::english(), FIXED).unwrap();
        let bytes = index.save(io::sink()).unwrap() as f64;
        let payload = 3323.0 * 300.0 * 4.0;
        assert!(bytes >= payload && bytes <= payload * 1.1, "{bytes}");
    }

    #[test]
    fn text_export() {
        let mut out = Vec::new();
        toy_index().export_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# model=toy dim=2"));
        assert_eq!(lines[1], "P9\tqqq\t-");
        assert_eq!(lines[3], "P582\tend time\t1.000000 1.000000");
    }

    fn index_strategy() -> impl Strategy<Value = PropertyIndex> {
        (1usize..8, any::<bool>(), prop::option::of(1usize..1_000_000), any::<u64>()).prop_flat_map(
            |(dim, use_description, vocab_cap, built_at)| {
                let entry = (
                    "\\PC{1,12}",
                    prop::collection::vec("\\PC{1,8}", 0..3),
                    prop::option::of(prop::collection::vec(
                        any::<f32>().prop_filter("finite", |c| c.is_finite()),
                        dim,
                    )),
                );
                prop::collection::btree_map(1u32..50_000, entry, 0..10).prop_map(move |map| {
                    let entries = map
                        .into_iter()
                        .map(|(n, (label, aliases, vector))| IndexEntry {
                            id: PropertyId::new(n),
                            label,
                            aliases,
                            vector,
                        })
                        .collect();
                    let meta = IndexMeta {
                        model_id: "prop".into(),
                        dim,
                        use_description,
                        vocab_cap,
                        built_at,
                    };
                    PropertyIndex::from_parts(meta, entries).unwrap()
                })
            },
        )
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(index in index_strategy()) {
            let mut buf = Vec::new();
            index.save(&mut buf).unwrap();
            let back = PropertyIndex::load(&buf[..]).unwrap();
            prop_assert_eq!(&back, &index);
            for (a, b) in back.entries().iter().zip(index.entries()) {
                let bits = |v: &Option<Vec<f32>>| v.as_ref().map(|v| v.iter().map(|c| c.to_bits()).collect::<Vec<_>>());
                prop_assert_eq!(bits(&a.vector), bits(&b.vector));
            }
        }

        #[test]
        fn single_byte_damage_never_loads(index in index_strategy(), pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
            let mut buf = Vec::new();
            index.save(&mut buf).unwrap();
            let at = pos.index(buf.len());
            buf[at] ^= mask;
            prop_assert!(PropertyIndex::load(&buf[..]).is_err());
        }
    }
}
