use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, IsTerminal, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use propsearch::eval::{parse_gold, DEFAULT_AUDIT_THRESHOLD};
use propsearch::{
    audit_aliases, build_gold, build_index, entity_simulation, evaluate, parse_entity_map,
    parse_properties, BuildConfig, CandidateScope, EmbeddingModel, EntityPropertyMap, EvalReport,
    EvalScope, GoldOptions, PropertyFormat, PropertyId, PropertyIndex, PropertyRecord, Searcher,
    Stopwords,
};
use propsearch_cli::service::{self, Engine, RankResponse};

#[derive(Debug, Parser)]
#[command(name = "propsearch", version, about = "Semantic search over Wikidata property metadata")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed property labels and write a binary index
    BuildIndex(BuildIndexArgs),
    /// Rank properties for a query
    Query(QueryArgs),
    /// Score rankings against the alias gold standard
    Eval(EvalArgs),
    /// Flag aliases that duplicate their label or are far from it
    Audit(AuditArgs),
    /// Serve the /v1 JSON API
    Serve(ServeArgs),
    /// Dump an index as text
    ExportIndex(ExportArgs),
}

#[derive(Debug, Args)]
struct StopwordArgs {
    /// Stopword file, one word per line (default: built-in English list)
    #[arg(long, env = "PROPSEARCH_STOPWORDS", conflicts_with = "no_stopwords")]
    stopwords: Option<PathBuf>,
    /// Keep every token
    #[arg(long)]
    no_stopwords: bool,
}

#[derive(Debug, Args)]
struct BuildIndexArgs {
    /// Embedding model in word2vec or GloVe text format
    model: PathBuf,
    /// Property snapshot (JSON lines or TSV)
    properties: PathBuf,
    /// Output index file
    output: PathBuf,
    /// Snapshot format; guessed from the extension when omitted
    #[arg(long, value_parser = parse_format)]
    format: Option<PropertyFormat>,
    /// Keep only the first N words of the model
    #[arg(long)]
    max_words: Option<NonZeroUsize>,
    /// Fail unless the model has this many dimensions
    #[arg(long)]
    dims_check: Option<usize>,
    /// Add description tokens to the label tokens
    #[arg(long)]
    use_description: bool,
    #[command(flatten)]
    stop: StopwordArgs,
}

#[derive(Debug, Args)]
struct QueryArgs {
    index: PathBuf,
    model: PathBuf,
    query: String,
    #[arg(long, default_value_t = service::DEFAULT_LIMIT)]
    limit: usize,
    /// File listing the candidate property ids (comma or whitespace separated)
    #[arg(long)]
    entity_scope: Option<PathBuf>,
    /// Print the service's JSON response shape instead of a table
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    stop: StopwordArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    Full,
    PerEntity,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Index file; repeat to evaluate several configurations
    #[arg(long = "index", required = true)]
    indexes: Vec<PathBuf>,
    /// Model file; give one for all indexes or one per index
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Property snapshot for the gold standard (default: the records stored in the index)
    #[arg(long)]
    properties: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<PropertyFormat>,
    /// Gold file with `alias<TAB>Pid[<TAB>Qid]` lines instead of the snapshot aliases
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Skip aliases equal to their property's label
    #[arg(long)]
    exclude_label_aliases: bool,
    #[arg(long, value_enum, default_value_t = ScopeArg::Full)]
    scope: ScopeArg,
    /// Entity to property map (`Qid<TAB>P1,P2,...`), required for per-entity scope
    #[arg(long)]
    entity_map: Option<PathBuf>,
    /// Number of entities to sample for per-entity scope (default: all)
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the text report(s) here as well as to stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Append one JSON row per configuration to this file
    #[arg(long)]
    jsonl: Option<PathBuf>,
    #[command(flatten)]
    stop: StopwordArgs,
}

#[derive(Debug, Args)]
struct AuditArgs {
    index: PathBuf,
    model: PathBuf,
    /// Aliases whose cosine to the property falls below this are flagged
    #[arg(long, default_value_t = DEFAULT_AUDIT_THRESHOLD)]
    threshold: f64,
    /// Print flagged aliases only
    #[arg(long)]
    flagged: bool,
    #[command(flatten)]
    stop: StopwordArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "PROPSEARCH_INDEX")]
    index: PathBuf,
    #[arg(long, env = "PROPSEARCH_MODEL")]
    model: PathBuf,
    #[arg(long, env = "PROPSEARCH_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "PROPSEARCH_PORT", default_value_t = 8080)]
    port: u16,
    /// Allowed CORS origin(s), comma separated, or `*`
    #[arg(long, env = "PROPSEARCH_CORS_ORIGIN", default_value = "*")]
    cors_origin: String,
    #[command(flatten)]
    stop: StopwordArgs,
}

#[derive(Debug, Args)]
struct ExportArgs {
    index: PathBuf,
    /// Output file (default: stdout)
    output: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<PropertyFormat, String> {
    s.parse()
}

/// Error printed as one JSON line on stderr.
#[derive(Debug)]
struct Failure {
    class: &'static str,
    message: String,
}

impl Failure {
    fn new(class: &'static str, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    fn at(path: &Path, err: impl Into<propsearch::Error>) -> Self {
        let err = err.into();
        Self::new(err.class(), format!("{}: {err}", path.display()))
    }

    fn io(path: &Path, err: io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }
}

macro_rules! failure_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for Failure {
            fn from(err: $ty) -> Self {
                let err = propsearch::Error::from(err);
                Self::new(err.class(), err.to_string())
            }
        }
    )*};
}

failure_from!(
    propsearch::EmbeddingError,
    propsearch::IngestError,
    propsearch::IndexError,
    propsearch::RankError,
    propsearch::EvalError
);

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = serde_json::json!({ "error": self.class, "message": self.message });
        write!(f, "{line}")
    }
}

type Result<T, E = Failure> = std::result::Result<T, E>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(|f| BufReader::with_capacity(1 << 20, f))
        .map_err(|e| Failure::io(path, e))
}

fn stopwords(args: &StopwordArgs) -> Result<Stopwords> {
    if args.no_stopwords {
        return Ok(Stopwords::none());
    }
    match &args.stopwords {
        Some(path) => Stopwords::from_reader(open(path)?).map_err(|e| Failure::io(path, e)),
        None => Ok(Stopwords::english()),
    }
}

fn load_model(path: &Path, max_words: Option<NonZeroUsize>) -> Result<EmbeddingModel> {
    let model = EmbeddingModel::from_path(path, max_words).map_err(|e| Failure::at(path, e))?;
    tracing::info!(
        model = model.model_id(),
        words = model.len(),
        dim = model.dim(),
        duplicates_skipped = model.duplicates_skipped(),
        "loaded model"
    );
    Ok(model)
}

fn load_index(path: &Path) -> Result<PropertyIndex> {
    PropertyIndex::load(open(path)?).map_err(|e| Failure::at(path, e))
}

/// Loads the model the way the index was built: same vocabulary cap.
fn load_index_and_model(index: &Path, model: &Path) -> Result<(PropertyIndex, EmbeddingModel)> {
    let index = load_index(index)?;
    let cap = index.meta().vocab_cap.and_then(NonZeroUsize::new);
    let model = load_model(model, cap)?;
    if index.model_id() != model.model_id() {
        tracing::warn!(
            index_model = index.model_id(),
            loaded_model = model.model_id(),
            "index was built with a different model file"
        );
    }
    Ok((index, model))
}

fn load_records(path: &Path, format: Option<PropertyFormat>) -> Result<Vec<PropertyRecord>> {
    let format = format.unwrap_or_else(|| PropertyFormat::from_file_name(&path.to_string_lossy()));
    let set = parse_properties(open(path)?, format).map_err(|e| Failure::at(path, e))?;
    if set.skipped_without_label > 0 {
        tracing::warn!(skipped = set.skipped_without_label, "properties without a label were skipped");
    }
    Ok(set.records)
}

fn load_entity_map(path: &Path, known: &[PropertyRecord]) -> Result<EntityPropertyMap> {
    parse_entity_map(open(path)?, Some(known)).map_err(|e| Failure::at(path, e))
}

fn parse_scope_file(path: &Path) -> Result<BTreeSet<PropertyId>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<PropertyId>()
                .map_err(|e| Failure::new("parse", format!("{}: {e}", path.display())))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(path, e))
}

fn build_index_cmd(args: BuildIndexArgs) -> Result<()> {
    let stop = stopwords(&args.stop)?;
    let model = load_model(&args.model, args.max_words)?;
    if let Some(dim) = args.dims_check {
        if model.dim() != dim {
            return Err(Failure::new(
                "dimension",
                format!("model has {} dimensions, expected {dim}", model.dim()),
            ));
        }
    }
    let records = load_records(&args.properties, args.format)?;
    let (index, report) = build_index(&model, &records, &stop, BuildConfig::now(args.use_description))?;

    // write next to the target, then rename, so a failed build never leaves a partial index
    let mut tmp = args.output.clone().into_os_string();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut out = create(&tmp)?;
    let bytes = index.save(&mut out).map_err(|e| Failure::at(&tmp, e))?;
    out.flush().map_err(|e| Failure::io(&tmp, e))?;
    drop(out);
    fs::rename(&tmp, &args.output).map_err(|e| Failure::io(&args.output, e))?;

    println!(
        "indexed {} properties ({} without vector), dim {}, {} bytes -> {}",
        report.entries,
        report.without_vector.len(),
        index.dim(),
        bytes,
        args.output.display()
    );
    Ok(())
}

fn query_cmd(args: QueryArgs) -> Result<()> {
    let limit = NonZeroUsize::new(args.limit)
        .ok_or_else(|| Failure::new("argument", "--limit must be at least 1"))?;
    let stop = stopwords(&args.stop)?;
    let (index, model) = load_index_and_model(&args.index, &args.model)?;
    let searcher = Searcher::new(&index, &model, &stop)?;
    let scope = args.entity_scope.as_deref().map(parse_scope_file).transpose()?;
    let candidates = match &scope {
        Some(ids) => CandidateScope::Only(ids),
        None => CandidateScope::All,
    };

    let started = std::time::Instant::now();
    let results = searcher.search(&args.query, candidates, limit)?;
    let elapsed_micros = started.elapsed().as_micros() as u64;

    let stdout = io::stdout();
    let mut out = stdout.lock();
    if args.json {
        let query_tokens = searcher.query_tokens(&args.query);
        let reason = if query_tokens.is_empty() {
            Some("empty_query")
        } else if searcher.query_vector(&args.query).is_none() {
            Some("all_oov")
        } else {
            None
        };
        let response = RankResponse {
            results,
            query_tokens,
            elapsed_micros,
            reason,
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&response).expect("serializable"));
    } else {
        for m in &results {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}",
                m.rank, m.property_id, m.tier, m.score, m.label
            );
        }
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    if args.models.len() != 1 && args.models.len() != args.indexes.len() {
        return Err(Failure::new(
            "argument",
            format!(
                "{} models for {} indexes; give one model or one per index",
                args.models.len(),
                args.indexes.len()
            ),
        ));
    }
    if args.scope == ScopeArg::PerEntity && args.entity_map.is_none() {
        return Err(Failure::new("argument", "--scope per-entity needs --entity-map"));
    }
    if args.scope == ScopeArg::Full && args.sample.is_some() {
        return Err(Failure::new("argument", "--sample applies to --scope per-entity only"));
    }
    let stop = stopwords(&args.stop)?;
    let options = GoldOptions {
        exclude_label_identical: args.exclude_label_aliases,
    };
    let snapshot = args
        .properties
        .as_deref()
        .map(|p| load_records(p, args.format))
        .transpose()?;
    let gold_file = args
        .gold
        .as_deref()
        .map(|p| parse_gold(open(p)?).map_err(|e| Failure::at(p, e)))
        .transpose()?;

    let mut texts = Vec::new();
    let mut rows = Vec::new();
    for (i, index_path) in args.indexes.iter().enumerate() {
        let model_path = &args.models[if args.models.len() == 1 { 0 } else { i }];
        let (index, model) = load_index_and_model(index_path, model_path)?;
        let searcher = Searcher::new(&index, &model, &stop)?;
        let records = snapshot.clone().unwrap_or_else(|| index.records());

        let report: EvalReport = match (args.scope, &gold_file) {
            (ScopeArg::Full, Some(gold)) => evaluate(&searcher, gold, EvalScope::Full)?,
            (ScopeArg::Full, None) => {
                evaluate(&searcher, &build_gold(&records, options), EvalScope::Full)?
            }
            (ScopeArg::PerEntity, gold) => {
                let path = args.entity_map.as_deref().expect("checked above");
                let map = load_entity_map(path, &records)?;
                match gold {
                    Some(gold) => evaluate(&searcher, gold, EvalScope::PerEntity(&map))?,
                    None => {
                        let sample = args.sample.unwrap_or(map.len());
                        entity_simulation(&searcher, &map, &records, sample, args.seed, options)?
                    }
                }
            }
        };
        texts.push(report.to_text());
        rows.push(report.to_json_row());
    }

    let text = texts.join("\n");
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).map_err(|e| Failure::io(path, e))?;
    }
    if let Some(path) = &args.jsonl {
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Failure::io(path, e))?;
        for row in &rows {
            writeln!(file, "{row}").map_err(|e| Failure::io(path, e))?;
        }
    }
    Ok(())
}

fn audit_cmd(args: AuditArgs) -> Result<()> {
    if !args.threshold.is_finite() {
        return Err(Failure::new("argument", "--threshold must be a finite number"));
    }
    let stop = stopwords(&args.stop)?;
    let (index, model) = load_index_and_model(&args.index, &args.model)?;
    let searcher = Searcher::new(&index, &model, &stop)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let _ = writeln!(out, "property_id\talias\tsimilarity\tflag");
    for row in audit_aliases(&searcher, args.threshold) {
        if args.flagged && row.flag == propsearch::AuditFlag::Ok {
            continue;
        }
        let similarity = row
            .similarity
            .map(|s| format!("{s:.6}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{}\t{}\t{}\t{}", row.property_id, row.alias, similarity, row.flag);
    }
    let _ = out.flush();
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let origin = service::cors_origin(&args.cors_origin).map_err(|e| Failure::new("argument", e))?;
    let stop = stopwords(&args.stop)?;
    let (index, model) = load_index_and_model(&args.index, &args.model)?;
    let engine = Engine::new(index, model, stop)?;
    let app = service::router(Some(Arc::new(engine)), origin);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new("io", e.to_string()))?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::new("io", format!("{addr}: {e}")))?;
        tracing::info!(address = %addr, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Failure::new("io", e.to_string()))
    })
}

fn export_cmd(args: ExportArgs) -> Result<()> {
    let index = load_index(&args.index)?;
    match &args.output {
        Some(path) => {
            let mut out = create(path)?;
            index.export_text(&mut out).map_err(|e| Failure::io(path, e))?;
            out.flush().map_err(|e| Failure::io(path, e))
        }
        None => {
            let _ = index.export_text(BufWriter::new(io::stdout().lock()));
            Ok(())
        }
    }
}

fn init_logging(json: bool) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .with_ansi(io::stderr().is_terminal());
    if json {
        builder.json().init();
    } else {
        builder.without_time().with_target(false).init();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(matches!(cli.command, Command::Serve(_)));
    let result = match cli.command {
        Command::BuildIndex(args) => build_index_cmd(args),
        Command::Query(args) => query_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Audit(args) => audit_cmd(args),
        Command::Serve(args) => serve_cmd(args),
        Command::ExportIndex(args) => export_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::FAILURE
        }
    }
}
