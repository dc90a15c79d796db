//! Pre-trained word vector tables and the vector arithmetic used for ranking.
//!
//! Models are read from the plain text formats distributed with fastText,
//! LexVec (word2vec text, with a `"<V> <D>"` header line) and GloVe (the same
//! records without a header). Rows are kept in file order, which for every
//! published model is descending corpus frequency, so truncating to the first
//! `max_words` rows keeps the most frequent words.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::num::NonZeroUsize;
use std::path::Path;

use thiserror::Error;

/// Refuse to pre-allocate more than this many components from a header alone.
const MAX_RESERVE_COMPONENTS: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("failed to read model: {0}")]
    Io(#[from] io::Error),
    #[error("model format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("model contains no word vectors")]
    Empty,
    #[error("vector dimension mismatch: {left} != {right}")]
    Dimension { left: usize, right: usize },
}

fn format_error(line: usize, message: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Format {
        line,
        message: message.into(),
    }
}

/// A dense vector living in a model's space.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVector(Vec<f32>);

impl WordVector {
    pub fn new(components: Vec<f32>) -> Self {
        Self(components)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&c| f64::from(c) * f64::from(c))
            .sum::<f64>()
            .sqrt()
    }
}

impl AsRef<[f32]> for WordVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vec<f32>> for WordVector {
    fn from(components: Vec<f32>) -> Self {
        Self(components)
    }
}

/// An immutable vocabulary-to-vector table.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    model_id: String,
    dim: usize,
    max_words: Option<usize>,
    words: Vec<String>,
    vocab: HashMap<String, u32>,
    data: Vec<f32>,
    duplicates_skipped: usize,
}

impl EmbeddingModel {
    /// Reads a word2vec-text or GloVe-text model from `reader`.
    ///
    /// A first line made of exactly two integers is taken as a `"<V> <D>"`
    /// header. The dimensionality is fixed by the header when present and by
    /// the first data row otherwise. Reading stops once `max_words` distinct
    /// words have been collected; later duplicates of a word are skipped.
    pub fn load<R: BufRead>(
        mut reader: R,
        model_id: impl Into<String>,
        max_words: Option<NonZeroUsize>,
    ) -> Result<Self, EmbeddingError> {
        let cap = max_words.map(NonZeroUsize::get);
        let mut model = Self {
            model_id: model_id.into(),
            dim: 0,
            max_words: cap,
            words: Vec::new(),
            vocab: HashMap::new(),
            data: Vec::new(),
            duplicates_skipped: 0,
        };

        let mut line = String::new();
        let mut line_no = 0usize;
        loop {
            if cap.is_some_and(|cap| model.words.len() >= cap) {
                break;
            }
            line.clear();
            line_no += 1;
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {}
                Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                    return Err(format_error(line_no, "invalid UTF-8"));
                }
                Err(e) => return Err(e.into()),
            }
            let record = line.trim_end_matches(['\n', '\r']);
            if record.trim().is_empty() {
                continue;
            }

            if line_no == 1 {
                if let Some((rows, dim)) = parse_header(record) {
                    if dim == 0 {
                        return Err(format_error(line_no, "header declares zero dimensions"));
                    }
                    model.dim = dim;
                    let expected_rows = cap.map_or(rows, |cap| cap.min(rows));
                    let reserve = expected_rows.saturating_mul(dim);
                    if reserve <= MAX_RESERVE_COMPONENTS {
                        model.data.reserve_exact(reserve);
                        model.words.reserve_exact(expected_rows);
                        model.vocab.reserve(expected_rows);
                    }
                    continue;
                }
            }

            model.push_record(record, line_no)?;
        }

        if model.words.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if model.duplicates_skipped > 0 {
            log::warn!(
                "{}: skipped {} duplicate vocabulary entries",
                model.model_id,
                model.duplicates_skipped
            );
        }
        model.data.shrink_to_fit();
        Ok(model)
    }

    /// Opens and loads a model file; the file name becomes the model id.
    pub fn from_path(
        path: impl AsRef<Path>,
        max_words: Option<NonZeroUsize>,
    ) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let model_id = path
            .file_name()
            .map(|name| name.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let file = File::open(path)?;
        Self::load(BufReader::with_capacity(1 << 20, file), model_id, max_words)
    }

    /// Builds a model from in-memory rows, applying the same checks as
    /// [`EmbeddingModel::load`].
    pub fn from_rows<I, S>(model_id: impl Into<String>, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut model = Self {
            model_id: model_id.into(),
            dim: 0,
            max_words: None,
            words: Vec::new(),
            vocab: HashMap::new(),
            data: Vec::new(),
            duplicates_skipped: 0,
        };
        for (row, (word, vector)) in rows.into_iter().enumerate() {
            let word = word.into();
            let line = row + 1;
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(format_error(line, format!("invalid word {word:?}")));
            }
            if model.dim == 0 {
                if vector.is_empty() {
                    return Err(format_error(line, "zero-length vector"));
                }
                model.dim = vector.len();
            } else if vector.len() != model.dim {
                return Err(format_error(
                    line,
                    format!("expected {} components, found {}", model.dim, vector.len()),
                ));
            }
            if let Some(c) = vector.iter().find(|c| !c.is_finite()) {
                return Err(format_error(line, format!("non-finite component {c}")));
            }
            if model.vocab.contains_key(&word) {
                model.duplicates_skipped += 1;
                continue;
            }
            model.vocab.insert(word.clone(), model.words.len() as u32);
            model.words.push(word);
            model.data.extend_from_slice(&vector);
        }
        if model.words.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        Ok(model)
    }

    fn push_record(&mut self, record: &str, line_no: usize) -> Result<(), EmbeddingError> {
        let mut fields = record.split_ascii_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| format_error(line_no, "missing word"))?;

        let start = self.data.len();
        for field in fields {
            let value: f32 = field.parse().map_err(|_| {
                self.data.truncate(start);
                format_error(line_no, format!("non-numeric component {field:?}"))
            })?;
            if !value.is_finite() {
                self.data.truncate(start);
                return Err(format_error(line_no, format!("non-finite component {field:?}")));
            }
            self.data.push(value);
        }
        let width = self.data.len() - start;
        if self.dim == 0 {
            if width == 0 {
                return Err(format_error(line_no, "row has no components"));
            }
            self.dim = width;
        } else if width != self.dim {
            self.data.truncate(start);
            return Err(format_error(
                line_no,
                format!("expected {} components, found {width}", self.dim),
            ));
        }

        if self.vocab.contains_key(word) {
            self.data.truncate(start);
            self.duplicates_skipped += 1;
            return Ok(());
        }
        self.vocab.insert(word.to_owned(), self.words.len() as u32);
        self.words.push(word.to_owned());
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The truncation requested at load time, if any.
    pub fn max_words(&self) -> Option<usize> {
        self.max_words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn duplicates_skipped(&self) -> usize {
        self.duplicates_skipped
    }

    /// Vocabulary in file order.
    pub fn words(&self) -> impl ExactSizeIterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    /// Case-sensitive table lookup. There is no subword fallback.
    pub fn lookup(&self, token: &str) -> Option<&[f32]> {
        let row = *self.vocab.get(token)? as usize;
        Some(&self.data[row * self.dim..(row + 1) * self.dim])
    }

    /// Componentwise sum of the raw vectors of all in-vocabulary tokens.
    ///
    /// Out-of-vocabulary tokens are skipped; `None` when none is found.
    pub fn phrase_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Option<WordVector> {
        let mut acc = vec![0f64; self.dim];
        let mut found = false;
        for row in tokens.iter().filter_map(|t| self.lookup(t.as_ref())) {
            found = true;
            for (sum, &c) in acc.iter_mut().zip(row) {
                *sum += f64::from(c);
            }
        }
        found.then(|| WordVector(acc.into_iter().map(|c| c as f32).collect()))
    }

    /// Writes the model back out in word2vec text format.
    pub fn write_word2vec<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {}", self.words.len(), self.dim)?;
        for (word, row) in self.words.iter().zip(self.data.chunks_exact(self.dim)) {
            out.write_all(word.as_bytes())?;
            for c in row {
                write!(out, " {c}")?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Approximate heap usage of the table in bytes.
    pub fn heap_bytes(&self) -> usize {
        let strings: usize = self.words.iter().map(String::capacity).sum();
        let map_slots = self.vocab.capacity()
            * (std::mem::size_of::<String>() + std::mem::size_of::<u32>() + 1);
        self.data.capacity() * std::mem::size_of::<f32>()
            + self.words.capacity() * std::mem::size_of::<String>()
            + 2 * strings
            + map_slots
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut fields = line.split_ascii_whitespace();
    let rows = fields.next()?.parse().ok()?;
    let dim = fields.next()?.parse().ok()?;
    fields.next().is_none().then_some((rows, dim))
}

/// Cosine similarity of two equal-length vectors, computed in `f64`.
///
/// A zero vector on either side yields `0.0`. The result is clamped to
/// `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::Dimension {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0f64;
    let mut norm_a = 0f64;
    let mut norm_b = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0)
}
