//! Semantic search over Linked Data property metadata.
//!
//! Property labels (and optionally descriptions) are embedded as the sum of
//! their word vectors from a pre-trained model. A query is embedded the same
//! way and properties are returned in three tiers: exact label matches, exact
//! alias matches, then everything else by cosine similarity. The [`eval`]
//! module scores the ranking against property aliases used as gold queries.

pub mod embeddings;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod ranker;

pub use embeddings::{cosine, EmbeddingError, EmbeddingModel, WordVector};
pub use eval::{
    audit_aliases, build_gold, entity_simulation, evaluate, rank_of_target, AliasAuditRow,
    AuditFlag, EvalError, EvalReport, EvalScope, GoldInstance, GoldOptions, Metrics,
};
pub use index::{build_index, BuildConfig, BuildReport, IndexEntry, IndexError, IndexMeta, PropertyIndex};
pub use ingest::{
    parse_entity_map, parse_properties, tokenize, EntityId, EntityPropertyMap, IngestError,
    PropertyFormat, PropertyId, PropertyRecord, PropertySet, Stopwords,
};
pub use ranker::{CandidateScope, MatchTier, RankError, RankedMatch, Searcher};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Error {
    /// Short stable name for the kind of failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Embedding(EmbeddingError::Io(_))
            | Error::Ingest(IngestError::Io(_))
            | Error::Index(IndexError::Io(_))
            | Error::Eval(EvalError::Io(_)) => "io",
            Error::Embedding(EmbeddingError::Empty) => "empty_model",
            Error::Embedding(EmbeddingError::Dimension { .. }) => "dimension",
            Error::Embedding(EmbeddingError::Format { .. }) => "model_format",
            Error::Ingest(IngestError::UnknownProperties(_)) => "validation",
            Error::Ingest(_) => "parse",
            Error::Index(IndexError::Build(_)) => "build",
            Error::Index(IndexError::Invalid(_)) => "invalid_index",
            Error::Index(IndexError::Format(_)) => "index_format",
            Error::Index(IndexError::Corrupt { .. }) => "index_corrupt",
            Error::Rank(RankError::UnknownScope(_) | RankError::EmptyScope) => "scope",
            Error::Rank(_) => "dimension",
            Error::Eval(EvalError::Rank(_)) => "scope",
            Error::Eval(EvalError::Gold { .. }) => "parse",
            Error::Eval(EvalError::Argument(_)) => "argument",
        }
    }
}
