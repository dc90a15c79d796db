//! JSON-over-HTTP ranking service under the `/v1` prefix.

use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use propsearch::{
    CandidateScope, EmbeddingModel, PropertyId, PropertyIndex, RankError, RankedMatch, Searcher,
    Stopwords,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const DEFAULT_LIMIT: usize = 10;

/// Index, model and stopwords shared by all requests.
#[derive(Debug)]
pub struct Engine {
    index: PropertyIndex,
    model: EmbeddingModel,
    stopwords: Stopwords,
}

impl Engine {
    pub fn new(
        index: PropertyIndex,
        model: EmbeddingModel,
        stopwords: Stopwords,
    ) -> Result<Self, RankError> {
        Searcher::new(&index, &model, &stopwords)?;
        Ok(Self {
            index,
            model,
            stopwords,
        })
    }

    pub fn searcher(&self) -> Searcher<'_> {
        Searcher::new(&self.index, &self.model, &self.stopwords)
            .expect("dimensions are checked when the engine is built")
    }

    pub fn index(&self) -> &PropertyIndex {
        &self.index
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankRequest {
    pub query: String,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub entity_properties: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankResponse {
    pub results: Vec<RankedMatch>,
    pub query_tokens: Vec<String>,
    pub elapsed_micros: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyView<'a> {
    pub property_id: PropertyId,
    pub label: &'a str,
    pub aliases: &'a [String],
    pub has_vector: bool,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": error, "message": message.into() }),
        }
    }

    fn unavailable() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "unavailable",
            "no index is loaded",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Shared = Option<Arc<Engine>>;

/// Per-request details picked up by the logging middleware.
#[derive(Debug, Clone, Copy)]
struct RankLog {
    query_chars: usize,
    scope_size: Option<usize>,
    results: usize,
}

async fn health(State(engine): State<Shared>) -> Result<Json<serde_json::Value>, ApiError> {
    let engine = engine.ok_or_else(ApiError::unavailable)?;
    Ok(Json(json!({
        "status": "ok",
        "properties": engine.index.len(),
        "dim": engine.index.dim(),
    })))
}

async fn property(
    State(engine): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let engine = engine.ok_or_else(ApiError::unavailable)?;
    let id: PropertyId = id
        .parse()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_id", format!("{e}")))?;
    let entry = engine.index.entry(id).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{id} is not indexed"))
    })?;
    let view = PropertyView {
        property_id: entry.id,
        label: &entry.label,
        aliases: &entry.aliases,
        has_vector: entry.vector.is_some(),
    };
    Ok(Json(view).into_response())
}

fn parse_scope(engine: &Engine, raw: &[String]) -> Result<BTreeSet<PropertyId>, ApiError> {
    if raw.is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_scope",
            "entity_properties must not be empty",
        ));
    }
    let mut scope = BTreeSet::new();
    let mut unknown = Vec::new();
    for text in raw {
        match text.parse::<PropertyId>() {
            Ok(id) if engine.index.position(id).is_some() => {
                scope.insert(id);
            }
            _ => unknown.push(text.clone()),
        }
    }
    if unknown.is_empty() {
        Ok(scope)
    } else {
        Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({
                "error": "unknown_properties",
                "message": format!("unknown property ids: {}", unknown.join(",")),
                "ids": unknown,
            }),
        })
    }
}

async fn rank(
    State(engine): State<Shared>,
    body: Result<Json<RankRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let engine = engine.ok_or_else(ApiError::unavailable)?;
    let Json(request) =
        body.map_err(|e| ApiError::new(e.status(), "bad_request", e.body_text()))?;
    let limit = request.limit.unwrap_or(DEFAULT_LIMIT);
    let limit = NonZeroUsize::new(limit).ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_limit", "limit must be at least 1")
    })?;
    let scope = request
        .entity_properties
        .as_deref()
        .map(|raw| parse_scope(&engine, raw))
        .transpose()?;

    let searcher = engine.searcher();
    let started = Instant::now();
    let candidates = match &scope {
        Some(ids) => CandidateScope::Only(ids),
        None => CandidateScope::All,
    };
    let results = searcher
        .search(&request.query, candidates, limit)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "scope", e.to_string()))?;
    let query_tokens = searcher.query_tokens(&request.query);
    let elapsed_micros = started.elapsed().as_micros() as u64;
    let reason = if query_tokens.is_empty() {
        Some("empty_query")
    } else if searcher.query_vector(&request.query).is_none() {
        Some("all_oov")
    } else {
        None
    };

    let log = RankLog {
        query_chars: request.query.chars().count(),
        scope_size: scope.as_ref().map(BTreeSet::len),
        results: results.len(),
    };
    let mut response = Json(RankResponse {
        results,
        query_tokens,
        elapsed_micros,
        reason,
    })
    .into_response();
    response.extensions_mut().insert(log);
    Ok(response)
}

async fn log_request(request: Request, next: Next) -> Response {
    let method = request.method().clone();
    let path = request.uri().path().to_owned();
    let started = Instant::now();
    let response = next.run(request).await;
    let latency_micros = started.elapsed().as_micros() as u64;
    let status = response.status().as_u16();
    match response.extensions().get::<RankLog>() {
        Some(rank) => tracing::info!(
            %method,
            path,
            status,
            latency_micros,
            query_chars = rank.query_chars,
            scope_size = rank.scope_size,
            results = rank.results,
            "request"
        ),
        None => tracing::info!(%method, path, status, latency_micros, "request"),
    }
    response
}

/// CORS origin policy: `*` or a comma separated list of origins.
pub fn cors_origin(value: &str) -> Result<AllowOrigin, String> {
    if value.trim() == "*" {
        return Ok(AllowOrigin::any());
    }
    let origins = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| HeaderValue::from_str(s).map_err(|_| format!("invalid origin {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if origins.is_empty() {
        return Err("no CORS origin given".into());
    }
    Ok(AllowOrigin::list(origins))
}

/// Routes for a loaded engine; with `None` every endpoint answers 503.
pub fn router(engine: Option<Arc<Engine>>, origin: AllowOrigin) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/rank", post(rank))
        .route("/v1/properties/{id}", get(property))
        .layer(middleware::from_fn(log_request))
        .layer(cors)
        .with_state(engine)
}
