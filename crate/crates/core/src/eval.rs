//! Alias gold standard evaluation.
//!
//! Every alias of a property is used as a query and the position of the
//! owning property in the cosine ranking is recorded. Top-N accuracy and
//! mean reciprocal rank are computed over all instances; instances whose
//! query or target has no vector count as misses with reciprocal rank 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{self, BufRead};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::embeddings::cosine_unchecked;
use crate::ingest::{EntityId, EntityPropertyMap, PropertyId, PropertyRecord};
use crate::ranker::{CandidateScope, RankError, Searcher};

/// Default cosine below which an alias is flagged as questionable.
pub const DEFAULT_AUDIT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    Argument(String),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("gold file line {line}: {message}")]
    Gold { line: usize, message: String },
    #[error("failed to read gold file: {0}")]
    Io(#[from] io::Error),
}

/// One alias query and the property it should retrieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldInstance {
    pub alias: String,
    pub target: PropertyId,
    /// Set for entity-restricted runs; candidates are that entity's properties.
    pub entity: Option<EntityId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GoldOptions {
    /// Drop aliases that equal their property's label (case-insensitive).
    pub exclude_label_identical: bool,
}

fn same_text(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

fn gold_for_record(
    record: &PropertyRecord,
    entity: Option<EntityId>,
    options: GoldOptions,
    out: &mut Vec<GoldInstance>,
) {
    for alias in &record.aliases {
        if options.exclude_label_identical && same_text(alias, &record.label) {
            continue;
        }
        out.push(GoldInstance {
            alias: alias.clone(),
            target: record.id,
            entity,
        });
    }
}

/// One instance per (alias, owning property), ordered by property id and
/// then by alias position.
pub fn build_gold(records: &[PropertyRecord], options: GoldOptions) -> Vec<GoldInstance> {
    let mut sorted: Vec<&PropertyRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    let mut gold = Vec::new();
    for record in sorted {
        gold_for_record(record, None, options, &mut gold);
    }
    gold
}

/// Reads `alias<TAB>Pid[<TAB>Qid]` lines.
pub fn parse_gold<R: BufRead>(reader: R) -> Result<Vec<GoldInstance>, EvalError> {
    let mut gold = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| EvalError::Gold {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 || fields[0].trim().is_empty() {
            return Err(err("expected alias<TAB>property[<TAB>entity]".into()));
        }
        let target = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("invalid property id {:?}", fields[1])))?;
        let entity = fields
            .get(2)
            .map(|e| e.trim().parse())
            .transpose()
            .map_err(|_| err(format!("invalid entity id {:?}", fields[2])))?;
        gold.push(GoldInstance {
            alias: fields[0].to_owned(),
            target,
            entity,
        });
    }
    Ok(gold)
}

/// 1-based rank of the instance's target among the scope's candidates, or
/// `None` when the alias has no in-vocabulary token, the target has no
/// vector, or the target is outside the scope.
pub fn rank_of_target(
    searcher: &Searcher<'_>,
    instance: &GoldInstance,
    scope: CandidateScope<'_>,
) -> Result<Option<usize>, RankError> {
    let positions = searcher.resolve_scope(scope)?;
    let index = searcher.index();
    let Some(target_pos) = index.position(instance.target) else {
        return Ok(None);
    };
    if positions.binary_search(&target_pos).is_err() {
        return Ok(None);
    }
    let Some(query) = searcher.query_vector(&instance.alias) else {
        return Ok(None);
    };
    let entries = index.entries();
    let Some(target_score) = searcher.score_entry(query.as_slice(), &entries[target_pos]) else {
        return Ok(None);
    };

    // The target's position in a (score desc, id asc) sort is one plus the
    // number of candidates that sort before it.
    let ahead = positions
        .iter()
        .filter(|&&pos| pos != target_pos)
        .filter_map(|&pos| {
            let entry = &entries[pos];
            searcher
                .score_entry(query.as_slice(), entry)
                .map(|score| (entry.id, score))
        })
        .filter(|&(id, score)| score > target_score || (score == target_score && id < instance.target))
        .count();
    Ok(Some(ahead + 1))
}

/// Top-N ratios and MRR over a list of ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub instances: usize,
    pub unresolved: usize,
    pub top1: f64,
    pub top3: f64,
    pub top10: f64,
    pub mrr: f64,
}

impl Metrics {
    /// `None` entries are unresolved and count as misses.
    pub fn from_ranks(ranks: &[Option<usize>]) -> Self {
        let n = ranks.len();
        let within = |k: usize| ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
        let reciprocal: f64 = ranks.iter().flatten().map(|&r| 1.0 / r as f64).sum();
        let ratio = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        Self {
            instances: n,
            unresolved: ranks.iter().filter(|r| r.is_none()).count(),
            top1: ratio(within(1)),
            top3: ratio(within(3)),
            top10: ratio(within(10)),
            mrr: if n == 0 { 0.0 } else { reciprocal / n as f64 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeMode {
    Full,
    PerEntity,
}

impl std::fmt::Display for ScopeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::PerEntity => "per_entity",
        })
    }
}

/// Where candidates come from during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EvalScope<'a> {
    Full,
    PerEntity(&'a EntityPropertyMap),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub model_id: String,
    pub vocab_cap: Option<usize>,
    pub vocab_size: usize,
    pub dim: usize,
    pub use_description: bool,
    pub scope: ScopeMode,
    pub seed: Option<u64>,
    pub sample_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub metrics: Metrics,
    /// Entities drawn by [`entity_simulation`], in draw order.
    pub sampled_entities: Vec<EntityId>,
}

impl EvalReport {
    /// Key/value text form.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let m = &self.metrics;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".to_owned());
        let mut out = String::new();
        let _ = writeln!(out, "model_id: {}", c.model_id);
        let _ = writeln!(out, "vocab_cap: {}", opt(c.vocab_cap.map(|v| v.to_string())));
        let _ = writeln!(out, "vocab_size: {}", c.vocab_size);
        let _ = writeln!(out, "dim: {}", c.dim);
        let _ = writeln!(out, "use_description: {}", c.use_description);
        let _ = writeln!(out, "scope: {}", c.scope);
        let _ = writeln!(out, "seed: {}", opt(c.seed.map(|v| v.to_string())));
        let _ = writeln!(out, "sample_size: {}", opt(c.sample_size.map(|v| v.to_string())));
        let _ = writeln!(out, "instances: {}", m.instances);
        let _ = writeln!(out, "unresolved: {}", m.unresolved);
        let _ = writeln!(out, "top1: {:.6}", m.top1);
        let _ = writeln!(out, "top3: {:.6}", m.top3);
        let _ = writeln!(out, "top10: {:.6}", m.top10);
        let _ = writeln!(out, "mrr: {:.6}", m.mrr);
        if !self.sampled_entities.is_empty() {
            let ids: Vec<String> = self.sampled_entities.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "sampled_entities: {}", ids.join(","));
        }
        out
    }

    /// One JSON object with the columns of a results table row.
    pub fn to_json_row(&self) -> String {
        let c = &self.config;
        let m = &self.metrics;
        serde_json::json!({
            "model": c.model_id,
            "vocab_cap": c.vocab_cap,
            "dim": c.dim,
            "use_description": c.use_description,
            "scope": c.scope,
            "top1": m.top1,
            "top3": m.top3,
            "top10": m.top10,
            "mrr": m.mrr,
            "instances": m.instances,
            "unresolved": m.unresolved,
        })
        .to_string()
    }
}

fn config_for(searcher: &Searcher<'_>, scope: ScopeMode) -> EvalConfig {
    let index = searcher.index();
    let model = searcher.model();
    EvalConfig {
        model_id: model.model_id().to_owned(),
        vocab_cap: model.max_words(),
        vocab_size: model.len(),
        dim: index.dim(),
        use_description: index.use_description(),
        scope,
        seed: None,
        sample_size: None,
    }
}

/// Ranks every instance and aggregates the metrics.
///
/// Instances are ranked in parallel; the reduction runs over the ranks in
/// gold order so totals do not depend on scheduling.
pub fn evaluate(
    searcher: &Searcher<'_>,
    gold: &[GoldInstance],
    scope: EvalScope<'_>,
) -> Result<EvalReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::Argument("gold standard is empty".into()));
    }
    let ranks = gold
        .par_iter()
        .map(|instance| {
            let candidates = match scope {
                EvalScope::Full => CandidateScope::All,
                EvalScope::PerEntity(map) => {
                    let entity = instance.entity.ok_or_else(|| {
                        EvalError::Argument(format!(
                            "instance {:?} has no entity for a per-entity run",
                            instance.alias
                        ))
                    })?;
                    let properties = map.get(entity).ok_or_else(|| {
                        EvalError::Argument(format!("{entity} is not in the entity map"))
                    })?;
                    CandidateScope::Only(properties)
                }
            };
            Ok(rank_of_target(searcher, instance, candidates)?)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let mode = match scope {
        EvalScope::Full => ScopeMode::Full,
        EvalScope::PerEntity(_) => ScopeMode::PerEntity,
    };
    Ok(EvalReport {
        config: config_for(searcher, mode),
        metrics: Metrics::from_ranks(&ranks),
        sampled_entities: Vec::new(),
    })
}

/// Uniform draw in `0..bound` by rejection sampling on 64-bit outputs.
fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - u64::MAX % bound;
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Draws `k` distinct entities without replacement.
///
/// The id list is sorted ascending, then a partial Fisher-Yates shuffle
/// driven by ChaCha8 seeded with `seed_from_u64(seed)` picks the first `k`
/// slots; draws use rejection sampling so they are unbiased.
pub fn sample_entities(map: &EntityPropertyMap, k: usize, seed: u64) -> Vec<EntityId> {
    let mut ids: Vec<EntityId> = map.entity_ids().collect();
    let k = k.min(ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = i + bounded(&mut rng, (ids.len() - i) as u64) as usize;
        ids.swap(i, j);
    }
    ids.truncate(k);
    ids
}

/// Entity-restricted evaluation: sample entities, use all aliases of their
/// properties as queries, and rank only among each entity's properties.
pub fn entity_simulation(
    searcher: &Searcher<'_>,
    map: &EntityPropertyMap,
    records: &[PropertyRecord],
    sample_size: usize,
    seed: u64,
    options: GoldOptions,
) -> Result<EvalReport, EvalError> {
    if map.is_empty() {
        return Err(EvalError::Argument("entity map is empty".into()));
    }
    if sample_size == 0 || sample_size > map.len() {
        return Err(EvalError::Argument(format!(
            "sample size {sample_size} must be between 1 and {}",
            map.len()
        )));
    }
    let by_id: BTreeMap<PropertyId, &PropertyRecord> = records.iter().map(|r| (r.id, r)).collect();
    let sampled = sample_entities(map, sample_size, seed);

    let mut gold = Vec::new();
    let mut missing = BTreeSet::new();
    for &entity in &sampled {
        for property in map.get(entity).into_iter().flatten() {
            match by_id.get(property) {
                Some(record) => gold_for_record(record, Some(entity), options, &mut gold),
                None => {
                    missing.insert(*property);
                }
            }
        }
    }
    if !missing.is_empty() {
        let ids: Vec<String> = missing.iter().map(ToString::to_string).collect();
        return Err(EvalError::Argument(format!(
            "entity map references properties without records: {}",
            ids.join(",")
        )));
    }
    if gold.is_empty() {
        return Err(EvalError::Argument("sampled entities have no aliases".into()));
    }

    let mut report = evaluate(searcher, &gold, EvalScope::PerEntity(map))?;
    report.config.seed = Some(seed);
    report.config.sample_size = Some(sample_size);
    report.sampled_entities = sampled;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditFlag {
    DuplicateOfLabel,
    LowSimilarity,
    Ok,
}

impl std::fmt::Display for AuditFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DuplicateOfLabel => "duplicate_of_label",
            Self::LowSimilarity => "low_similarity",
            Self::Ok => "ok",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AliasAuditRow {
    pub property_id: PropertyId,
    pub alias: String,
    /// Cosine between alias and property vectors; `None` when either is absent.
    pub similarity: Option<f64>,
    pub flag: AuditFlag,
}

/// Scores every alias against its own property.
///
/// Aliases equal to the label are flagged as duplicates. Others are flagged
/// low-similarity when the cosine is below `threshold` or cannot be computed.
pub fn audit_aliases(searcher: &Searcher<'_>, threshold: f64) -> Vec<AliasAuditRow> {
    let mut rows = Vec::new();
    for entry in searcher.index().entries() {
        for alias in &entry.aliases {
            let similarity = match (searcher.query_vector(alias), entry.vector.as_deref()) {
                (Some(q), Some(v)) => Some(cosine_unchecked(q.as_slice(), v)),
                _ => None,
            };
            let flag = if same_text(alias, &entry.label) {
                AuditFlag::DuplicateOfLabel
            } else if similarity.is_none_or(|s| s < threshold) {
                AuditFlag::LowSimilarity
            } else {
                AuditFlag::Ok
            };
            rows.push(AliasAuditRow {
                property_id: entry.id,
                alias: alias.clone(),
                similarity,
                flag,
            });
        }
    }
    rows
}
