//! Property metadata snapshots, entity-to-property maps and text tokenization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read input: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("duplicate property {id} at line {line}")]
    DuplicateProperty { id: PropertyId, line: usize },
    #[error("unknown properties referenced: {}", join_ids(.0))]
    UnknownProperties(Vec<PropertyId>),
    #[error("cannot serialize {id}: {message}")]
    Serialize { id: PropertyId, message: String },
}

fn join_ids(ids: &[PropertyId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_error(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

macro_rules! wikidata_id {
    ($(#[$doc:meta])* $name:ident, $prefix:literal) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(u32);

        impl $name {
            pub fn new(number: u32) -> Self {
                Self(number)
            }

            pub fn number(self) -> u32 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = IngestError;

            /// Accepts the canonical form only: prefix then digits, no
            /// leading zeros.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let invalid = || IngestError::InvalidId(s.to_owned());
                let digits = s.strip_prefix($prefix).ok_or_else(invalid)?;
                if digits.is_empty()
                    || !digits.bytes().all(|b| b.is_ascii_digit())
                    || (digits.len() > 1 && digits.starts_with('0'))
                {
                    return Err(invalid());
                }
                digits.parse().map(Self).map_err(|_| invalid())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(deserializer)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

wikidata_id!(
    /// A Wikidata property identifier such as `P582`. Orders numerically.
    PropertyId,
    "P"
);
wikidata_id!(
    /// A Wikidata item identifier such as `Q5582`.
    EntityId,
    "Q"
);

/// English metadata for one property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PropertyRecord {
    pub id: PropertyId,
    pub label: String,
    pub description: Option<String>,
    pub aliases: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawProperty {
    id: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    aliases: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropertyFormat {
    /// One JSON object per line: `id`, `label`, `description`, `aliases`.
    Json,
    /// `id<TAB>label<TAB>description<TAB>alias1|alias2|…`
    Tsv,
}

impl PropertyFormat {
    /// Guesses the format from a file name; anything but `.tsv` is JSON.
    pub fn from_file_name(name: &str) -> Self {
        if name.ends_with(".tsv") {
            Self::Tsv
        } else {
            Self::Json
        }
    }
}

impl FromStr for PropertyFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "property-json" | "json" | "jsonl" => Ok(Self::Json),
            "tsv" => Ok(Self::Tsv),
            other => Err(format!("unknown property format {other:?}")),
        }
    }
}

/// Result of reading a property snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PropertySet {
    pub records: Vec<PropertyRecord>,
    /// Records dropped because they have no English label.
    pub skipped_without_label: usize,
}

fn non_blank(s: Option<String>) -> Option<String> {
    s.map(|s| s.trim().to_owned()).filter(|s| !s.is_empty())
}

fn clean_aliases<I: IntoIterator<Item = String>>(aliases: I) -> Vec<String> {
    aliases
        .into_iter()
        .map(|a| a.trim().to_owned())
        .filter(|a| !a.is_empty())
        .collect()
}

/// Reads a property snapshot. Blank lines are ignored.
pub fn parse_properties<R: BufRead>(
    reader: R,
    format: PropertyFormat,
) -> Result<PropertySet, IngestError> {
    let mut set = PropertySet::default();
    let mut seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData => parse_error(line_no, "invalid UTF-8"),
            _ => e.into(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }

        let (id, label, description, aliases) = match format {
            PropertyFormat::Json => {
                let raw: RawProperty = serde_json::from_str(line)
                    .map_err(|e| parse_error(line_no, e.to_string()))?;
                (raw.id, raw.label, raw.description, clean_aliases(raw.aliases))
            }
            PropertyFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() < 2 || fields.len() > 4 {
                    return Err(parse_error(
                        line_no,
                        format!("expected 2 to 4 tab-separated fields, found {}", fields.len()),
                    ));
                }
                let field = |i: usize| fields.get(i).map(|s| s.to_string());
                let aliases = fields
                    .get(3)
                    .map(|a| clean_aliases(a.split('|').map(str::to_owned)))
                    .unwrap_or_default();
                (fields[0].trim().to_owned(), field(1), field(2), aliases)
            }
        };

        let id: PropertyId = id
            .parse()
            .map_err(|_| parse_error(line_no, format!("invalid property id {id:?}")))?;
        if !seen.insert(id) {
            return Err(IngestError::DuplicateProperty { id, line: line_no });
        }
        let Some(label) = non_blank(label) else {
            set.skipped_without_label += 1;
            continue;
        };
        set.records.push(PropertyRecord {
            id,
            label,
            description: non_blank(description),
            aliases,
        });
    }

    if set.skipped_without_label > 0 {
        log::info!(
            "skipped {} properties without an English label",
            set.skipped_without_label
        );
    }
    Ok(set)
}

/// Writes records in the given snapshot format.
pub fn write_properties<W: Write>(
    records: &[PropertyRecord],
    format: PropertyFormat,
    mut out: W,
) -> Result<(), IngestError> {
    for record in records {
        match format {
            PropertyFormat::Json => {
                let line = serde_json::to_string(record).map_err(|e| IngestError::Serialize {
                    id: record.id,
                    message: e.to_string(),
                })?;
                writeln!(out, "{line}")?;
            }
            PropertyFormat::Tsv => {
                let forbidden = |s: &str| s.contains(['\t', '\n', '\r']);
                let text = std::iter::once(record.label.as_str())
                    .chain(record.description.as_deref())
                    .chain(record.aliases.iter().map(String::as_str));
                if text.clone().any(forbidden) || record.aliases.iter().any(|a| a.contains('|')) {
                    return Err(IngestError::Serialize {
                        id: record.id,
                        message: "field contains a tab, newline or alias separator".into(),
                    });
                }
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    record.id,
                    record.label,
                    record.description.as_deref().unwrap_or(""),
                    record.aliases.join("|")
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// A lowercase stopword list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse_list(DEFAULT_STOPWORDS)
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_reader<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut words = HashSet::new();
        for line in reader.lines() {
            let line = line?;
            insert_stopword(&mut words, &line);
        }
        Ok(Self(words))
    }

    fn parse_list(text: &str) -> Self {
        let mut words = HashSet::new();
        for line in text.lines() {
            insert_stopword(&mut words, line);
        }
        Self(words)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn insert_stopword(words: &mut HashSet<String>, line: &str) {
    let word = line.trim();
    if !word.is_empty() && !word.starts_with('#') {
        words.insert(word.to_lowercase());
    }
}

impl<S: AsRef<str>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|w| w.as_ref().to_lowercase()).collect())
    }
}

/// Lowercases `text`, splits it on whitespace, trims non-alphanumeric
/// characters off both ends of each piece and drops empties and stopwords.
///
/// Inner punctuation such as hyphens and apostrophes survives.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|piece| piece.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|token| !token.is_empty() && !stopwords.contains(token))
        .map(str::to_owned)
        .collect()
}

/// Which properties each entity uses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityPropertyMap {
    entities: BTreeMap<EntityId, BTreeSet<PropertyId>>,
}

impl EntityPropertyMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds properties to an entity, merging with any already present.
    pub fn insert<I: IntoIterator<Item = PropertyId>>(&mut self, entity: EntityId, properties: I) {
        self.entities.entry(entity).or_default().extend(properties);
        if self.entities.get(&entity).is_some_and(BTreeSet::is_empty) {
            self.entities.remove(&entity);
        }
    }

    pub fn get(&self, entity: EntityId) -> Option<&BTreeSet<PropertyId>> {
        self.entities.get(&entity)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entities.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &BTreeSet<PropertyId>)> {
        self.entities.iter().map(|(k, v)| (*k, v))
    }

    /// Fails with every referenced property id missing from `known`.
    pub fn validate(&self, known: &[PropertyRecord]) -> Result<(), IngestError> {
        let known: HashSet<PropertyId> = known.iter().map(|r| r.id).collect();
        let unknown: BTreeSet<PropertyId> = self
            .entities
            .values()
            .flatten()
            .filter(|id| !known.contains(id))
            .copied()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(IngestError::UnknownProperties(unknown.into_iter().collect()))
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (entity, properties) in &self.entities {
            let list: Vec<String> = properties.iter().map(ToString::to_string).collect();
            writeln!(out, "{entity}\t{}", list.join(","))?;
        }
        out.flush()
    }
}

/// Reads `<Qid>\t<Pid>,<Pid>,…` lines. Repeated entities are merged. When
/// `known` is given, every referenced property must appear in it.
pub fn parse_entity_map<R: BufRead>(
    reader: R,
    known: Option<&[PropertyRecord]>,
) -> Result<EntityPropertyMap, IngestError> {
    let mut map = EntityPropertyMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (entity, list) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(line_no, "expected <entity>\\t<properties>"))?;
        let entity: EntityId = entity
            .trim()
            .parse()
            .map_err(|_| parse_error(line_no, format!("invalid entity id {entity:?}")))?;
        let properties = list
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse::<PropertyId>()
                    .map_err(|_| parse_error(line_no, format!("invalid property id {p:?}")))
            })
            .collect::<Result<BTreeSet<_>, _>>()?;
        if properties.is_empty() {
            return Err(parse_error(line_no, format!("{entity} lists no properties")));
        }
        map.insert(entity, properties);
    }
    if let Some(known) = known {
        map.validate(known)?;
    }
    Ok(map)
}

/// Snapshot-level alias counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AliasSummary {
    pub properties: usize,
    pub properties_with_aliases: usize,
    pub aliases: usize,
    /// Aliases equal to their own label, ignoring case and outer whitespace.
    pub label_identical: usize,
}

pub fn alias_summary(records: &[PropertyRecord]) -> AliasSummary {
    let normalize = |s: &str| s.trim().to_lowercase();
    AliasSummary {
        properties: records.len(),
        properties_with_aliases: records.iter().filter(|r| !r.aliases.is_empty()).count(),
        aliases: records.iter().map(|r| r.aliases.len()).sum(),
        label_identical: records
            .iter()
            .map(|r| {
                let label = normalize(&r.label);
                r.aliases.iter().filter(|a| normalize(a) == label).count()
            })
            .sum(),
    }
}

/// Alias coverage over the (entity, property) pairs of a map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AliasCoverage {
    /// Entity/property pairs in the map.
    pub listed: usize,
    /// Pairs whose property has at least one alias.
    pub with_aliases: usize,
    /// Mean alias count over pairs whose property has at least one alias.
    pub mean_aliases: f64,
}

impl AliasCoverage {
    pub fn ratio_with_aliases(&self) -> f64 {
        if self.listed == 0 {
            0.0
        } else {
            self.with_aliases as f64 / self.listed as f64
        }
    }
}

/// Counts alias coverage for the given entities (all entities when `None`).
pub fn alias_coverage(
    map: &EntityPropertyMap,
    records: &[PropertyRecord],
    entities: Option<&[EntityId]>,
) -> AliasCoverage {
    let alias_counts: BTreeMap<PropertyId, usize> =
        records.iter().map(|r| (r.id, r.aliases.len())).collect();
    let selected: Vec<EntityId> = match entities {
        Some(ids) => ids.to_vec(),
        None => map.entity_ids().collect(),
    };
    let mut listed = 0;
    let mut with_aliases = 0;
    let mut alias_total = 0;
    for properties in selected.iter().filter_map(|e| map.get(*e)) {
        for property in properties {
            listed += 1;
            let count = alias_counts.get(property).copied().unwrap_or(0);
            if count > 0 {
                with_aliases += 1;
                alias_total += count;
            }
        }
    }
    AliasCoverage {
        listed,
        with_aliases,
        mean_aliases: if with_aliases == 0 {
            0.0
        } else {
            alias_total as f64 / with_aliases as f64
        },
    }
}
