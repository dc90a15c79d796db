//! Test-only helpers: fixture loading, random toy instances and an
//! exhaustive ranking oracle that shares no code with the library's ranker.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use propsearch::{
    build_index, parse_entity_map, parse_properties, BuildConfig, EmbeddingModel,
    EntityPropertyMap, PropertyFormat, PropertyId, PropertyIndex, PropertyRecord, Stopwords,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Fixture {
    pub model: EmbeddingModel,
    pub records: Vec<PropertyRecord>,
    pub entities: EntityPropertyMap,
    pub stopwords: Stopwords,
}

impl Fixture {
    pub fn load() -> Self {
        let model = EmbeddingModel::from_path(fixture_path("toy_model.vec"), None).unwrap();
        let file = File::open(fixture_path("properties.jsonl")).unwrap();
        let records = parse_properties(BufReader::new(file), PropertyFormat::Json)
            .unwrap()
            .records;
        let file = File::open(fixture_path("entities.tsv")).unwrap();
        let entities = parse_entity_map(BufReader::new(file), Some(&records)).unwrap();
        Self {
            model,
            records,
            entities,
            stopwords: Stopwords::english(),
        }
    }

    pub fn index(&self, use_description: bool) -> PropertyIndex {
        let config = BuildConfig {
            use_description,
            built_at: 0,
        };
        build_index(&self.model, &self.records, &self.stopwords, config)
            .unwrap()
            .0
    }
}

pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
    let nb: f64 = b.iter().map(|&y| f64::from(y) * f64::from(y)).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Sum of in-vocabulary token rows, accumulated in f64.
pub fn oracle_phrase(model: &EmbeddingModel, tokens: &[String]) -> Option<Vec<f32>> {
    let rows: Vec<&[f32]> = tokens.iter().filter_map(|t| model.lookup(t)).collect();
    if rows.is_empty() {
        return None;
    }
    Some(
        (0..model.dim())
            .map(|d| rows.iter().map(|r| f64::from(r[d])).sum::<f64>() as f32)
            .collect(),
    )
}

/// Scores every candidate with a vector, then insertion-sorts by
/// (score descending, id ascending).
pub fn oracle_ranking(
    index: &PropertyIndex,
    query: &[f32],
    scope: Option<&BTreeSet<PropertyId>>,
) -> Vec<(PropertyId, f64)> {
    let mut out: Vec<(PropertyId, f64)> = Vec::new();
    for entry in index.entries() {
        if scope.is_some_and(|s| !s.contains(&entry.id)) {
            continue;
        }
        let Some(v) = &entry.vector else { continue };
        let item = (entry.id, oracle_cosine(query, v));
        let at = out
            .iter()
            .position(|&(id, score)| item.1 > score || (item.1 == score && item.0 < id))
            .unwrap_or(out.len());
        out.insert(at, item);
    }
    out
}

pub fn oracle_rank_of(
    index: &PropertyIndex,
    query: &[f32],
    scope: Option<&BTreeSet<PropertyId>>,
    target: PropertyId,
) -> Option<usize> {
    oracle_ranking(index, query, scope)
        .iter()
        .position(|&(id, _)| id == target)
        .map(|p| p + 1)
}

/// A random model plus index. Vector components are small integers so
/// exact score ties are common.
pub struct ToyInstance {
    pub model: EmbeddingModel,
    pub records: Vec<PropertyRecord>,
    pub index: PropertyIndex,
    pub vocab: Vec<String>,
}

pub fn toy_instance(rng: &mut ChaCha8Rng, max_props: usize, max_dim: usize, integer_grid: bool) -> ToyInstance {
    let dim = rng.random_range(1..=max_dim);
    let vocab_size = rng.random_range(3..40);
    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("w{i}")).collect();
    let rows = vocab.iter().map(|w| {
        let v: Vec<f32> = (0..dim)
            .map(|_| {
                if integer_grid {
                    rng.random_range(-2i32..=2) as f32
                } else {
                    rng.random_range(-1.0f32..1.0)
                }
            })
            .collect();
        (w.clone(), v)
    });
    let rows: Vec<_> = rows.collect();
    let model = EmbeddingModel::from_rows("toy", rows).unwrap();

    let n_props = rng.random_range(1..=max_props);
    let mut ids: Vec<u32> = (1..=(n_props as u32 * 3)).collect();
    ids.shuffle(rng);
    let records: Vec<PropertyRecord> = ids[..n_props]
        .iter()
        .map(|&n| {
            let words = rng.random_range(1..=3);
            let label: Vec<String> = (0..words)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        format!("oov{}", rng.random_range(0..5))
                    } else {
                        vocab.choose(rng).unwrap().clone()
                    }
                })
                .collect();
            let aliases = (0..rng.random_range(0..3))
                .map(|_| {
                    (0..rng.random_range(1..=2))
                        .map(|_| vocab.choose(rng).unwrap().clone())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            PropertyRecord {
                id: PropertyId::new(n),
                label: label.join(" "),
                description: None,
                aliases,
            }
        })
        .collect();
    let config = BuildConfig {
        use_description: false,
        built_at: 0,
    };
    let index = build_index(&model, &records, &Stopwords::none(), config).unwrap().0;
    ToyInstance {
        model,
        records,
        index,
        vocab,
    }
}

pub fn random_query(rng: &mut ChaCha8Rng, vocab: &[String]) -> String {
    (0..rng.random_range(1..=3))
        .map(|_| {
            if rng.random_bool(0.1) {
                "missing".to_owned()
            } else {
                vocab.choose(rng).unwrap().clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_scope(rng: &mut ChaCha8Rng, index: &PropertyIndex) -> BTreeSet<PropertyId> {
    let mut ids: Vec<PropertyId> = index.entries().iter().map(|e| e.id).collect();
    ids.shuffle(rng);
    let k = rng.random_range(1..=ids.len());
    ids.truncate(k);
    ids.into_iter().collect()
}

/// Random entity map over the instance's properties.
pub fn random_entities(rng: &mut ChaCha8Rng, index: &PropertyIndex, count: u32) -> EntityPropertyMap {
    let mut map = EntityPropertyMap::new();
    for q in 1..=count {
        map.insert(propsearch::EntityId::new(q), random_scope(rng, index));
    }
    map
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
