//! Query ranking: exact label matches, then exact alias matches, then the
//! remaining candidates by cosine similarity to the query vector.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{cosine_unchecked, EmbeddingModel, WordVector};
use crate::index::{IndexEntry, PropertyIndex};
use crate::ingest::{tokenize, PropertyId, Stopwords};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RankError {
    #[error("scope references unknown properties: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))]
    UnknownScope(Vec<PropertyId>),
    #[error("scope is empty")]
    EmptyScope,
    #[error("index has {index} dimensions but the model has {model}")]
    DimensionMismatch { index: usize, model: usize },
    #[error("query vector has {found} dimensions, expected {expected}")]
    QueryDimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchTier {
    LabelExact,
    AliasExact,
    Semantic,
}

impl fmt::Display for MatchTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LabelExact => "label_exact",
            Self::AliasExact => "alias_exact",
            Self::Semantic => "semantic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedMatch {
    pub property_id: PropertyId,
    pub label: String,
    pub tier: MatchTier,
    /// Cosine similarity for semantic matches, 1.0 for exact ones.
    pub score: f64,
    /// 1-based position in the returned list.
    pub rank: usize,
}

/// Which properties a query may return.
#[derive(Debug, Clone, Copy)]
pub enum CandidateScope<'a> {
    All,
    Only(&'a BTreeSet<PropertyId>),
}

/// Orders by descending score, then ascending property id.
pub fn compare_scored(a: &(PropertyId, f64), b: &(PropertyId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Ranking over a borrowed index and model.
#[derive(Debug, Clone, Copy)]
pub struct Searcher<'a> {
    index: &'a PropertyIndex,
    model: &'a EmbeddingModel,
    stopwords: &'a Stopwords,
}

impl<'a> Searcher<'a> {
    /// Fails when the index and model dimensions differ. Model ids are not
    /// compared here.
    pub fn new(
        index: &'a PropertyIndex,
        model: &'a EmbeddingModel,
        stopwords: &'a Stopwords,
    ) -> Result<Self, RankError> {
        if index.dim() != model.dim() {
            return Err(RankError::DimensionMismatch {
                index: index.dim(),
                model: model.dim(),
            });
        }
        Ok(Self {
            index,
            model,
            stopwords,
        })
    }

    pub fn index(&self) -> &'a PropertyIndex {
        self.index
    }

    pub fn model(&self) -> &'a EmbeddingModel {
        self.model
    }

    pub fn stopwords(&self) -> &'a Stopwords {
        self.stopwords
    }

    pub fn query_tokens(&self, query: &str) -> Vec<String> {
        tokenize(query, self.stopwords)
    }

    /// Sum of the query's in-vocabulary word vectors.
    pub fn query_vector(&self, query: &str) -> Option<WordVector> {
        self.model.phrase_vector(&self.query_tokens(query))
    }

    /// Index positions of the candidates, in id order.
    pub fn resolve_scope(&self, scope: CandidateScope<'_>) -> Result<Vec<usize>, RankError> {
        match scope {
            CandidateScope::All => Ok((0..self.index.len()).collect()),
            CandidateScope::Only(ids) => {
                if ids.is_empty() {
                    return Err(RankError::EmptyScope);
                }
                let mut positions = Vec::with_capacity(ids.len());
                let mut unknown = Vec::new();
                for &id in ids {
                    match self.index.position(id) {
                        Some(pos) => positions.push(pos),
                        None => unknown.push(id),
                    }
                }
                if unknown.is_empty() {
                    Ok(positions)
                } else {
                    Err(RankError::UnknownScope(unknown))
                }
            }
        }
    }

    /// All candidates with a vector, by descending cosine to the query.
    /// Empty when the query has no in-vocabulary token.
    pub fn rank_semantic(
        &self,
        query: &str,
        scope: CandidateScope<'_>,
    ) -> Result<Vec<(PropertyId, f64)>, RankError> {
        let positions = self.resolve_scope(scope)?;
        match self.query_vector(query) {
            Some(q) => Ok(self.rank_positions(q.as_slice(), &positions)),
            None => Ok(Vec::new()),
        }
    }

    /// Like [`Searcher::rank_semantic`] for an explicit query vector.
    pub fn rank_vector(
        &self,
        query: &[f32],
        scope: CandidateScope<'_>,
    ) -> Result<Vec<(PropertyId, f64)>, RankError> {
        if query.len() != self.index.dim() {
            return Err(RankError::QueryDimension {
                expected: self.index.dim(),
                found: query.len(),
            });
        }
        let positions = self.resolve_scope(scope)?;
        Ok(self.rank_positions(query, &positions))
    }

    fn rank_positions(&self, query: &[f32], positions: &[usize]) -> Vec<(PropertyId, f64)> {
        let entries = self.index.entries();
        let mut scored: Vec<(PropertyId, f64)> = positions
            .iter()
            .map(|&pos| &entries[pos])
            .filter_map(|entry| {
                let vector = entry.vector.as_deref()?;
                Some((entry.id, cosine_unchecked(query, vector)))
            })
            .collect();
        scored.sort_unstable_by(compare_scored);
        scored
    }

    /// Cosine of the query against one entry, when both vectors exist.
    pub(crate) fn score_entry(&self, query: &[f32], entry: &IndexEntry) -> Option<f64> {
        entry
            .vector
            .as_deref()
            .map(|vector| cosine_unchecked(query, vector))
    }

    /// Three-tier search truncated to `limit` results.
    pub fn search(
        &self,
        query: &str,
        scope: CandidateScope<'_>,
        limit: NonZeroUsize,
    ) -> Result<Vec<RankedMatch>, RankError> {
        let positions = self.resolve_scope(scope)?;
        let needle = query.trim().to_lowercase();
        if needle.is_empty() {
            return Ok(Vec::new());
        }
        let limit = limit.get();
        let entries = self.index.entries();
        let mut seen = HashSet::new();
        let mut results = Vec::new();

        let exact = |text: &str| text.trim().to_lowercase() == needle;
        for &pos in &positions {
            let entry = &entries[pos];
            if exact(&entry.label) {
                seen.insert(entry.id);
                results.push((entry, MatchTier::LabelExact, 1.0));
            }
        }
        for &pos in &positions {
            let entry = &entries[pos];
            if !seen.contains(&entry.id) && entry.aliases.iter().any(|a| exact(a)) {
                seen.insert(entry.id);
                results.push((entry, MatchTier::AliasExact, 1.0));
            }
        }

        if results.len() < limit {
            if let Some(q) = self.query_vector(query) {
                for (id, score) in self.rank_positions(q.as_slice(), &positions) {
                    if results.len() >= limit {
                        break;
                    }
                    if !seen.contains(&id) {
                        let entry = self.index.entry(id).expect("ranked id comes from the index");
                        results.push((entry, MatchTier::Semantic, score));
                    }
                }
            }
        }

        Ok(results
            .into_iter()
            .take(limit)
            .enumerate()
            .map(|(i, (entry, tier, score))| RankedMatch {
                property_id: entry.id,
                label: entry.label.clone(),
                tier,
                score,
                rank: i + 1,
            })
            .collect())
    }
}
