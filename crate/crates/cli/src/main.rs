use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tracing_subscriber::EnvFilter;

use contextiq::ad::{build_context_lut, AppState, CampaignRegistry, CampaignSpec, ContextLut};
use contextiq::eval::{run_benchmark, ApVariant, QueryRecord, RelevanceJudgments, DEFAULT_KS};
use contextiq::ingest::{run_pipeline, PlanParams, SceneBoundary, SceneExtras, SceneRecord, TimedFeature};
use contextiq::jsonl;
use contextiq::metadata::{
    run_metadata, ActionClassMap, ConceptRecord, MetadataInputs, MetadataParams, SceneMetadata, Wordlist,
};
use contextiq::search::{parse_bound, AggregationConfig, SafetyPolicy, SceneTags, SearchRequest};
use contextiq::store::{ingest_embeddings, EmbeddingRecord, EmbeddingStore};
use contextiq::synth::{self, SynthParams};
use contextiq::Modality;

#[derive(Parser)]
#[command(name = "contextiq", version, about = "Multimodal scene retrieval and contextual ad lookup")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pool features and text embeddings into a store directory.
    Ingest(IngestArgs),
    /// Fuse detector outputs into metadata sentences and safety tags.
    Metadata(MetadataArgs),
    /// Run one search request against a store.
    Search(SearchArgs),
    /// Score a query set against relevance judgments.
    Eval(EvalArgs),
    /// Precompute the scene-to-context lookup table.
    BuildLut(BuildLutArgs),
    /// Serve campaign registration and context lookups over HTTP.
    Serve(ServeArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
}

/// Shared aggregation overrides.
#[derive(Args, Clone)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Per-modality weights, e.g. `video=1,audio=0.5`.
    #[arg(long)]
    weights: Option<String>,
    /// Per-modality raw-score thresholds; `inf` / `-inf` allowed.
    #[arg(long, allow_hyphen_values = true)]
    thresholds: Option<String>,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory holding boundaries.jsonl, features.jsonl, and optionally
    /// text_embeddings.jsonl and metadata.jsonl.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    boundaries: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    text_embeddings: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MetadataArgs {
    /// Directory of detector files (detections, places, actions, captions,
    /// entities, text_emotions, profanity, hate, concepts); missing ones are empty.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    action_map: Option<PathBuf>,
    #[arg(long)]
    wordlist: Option<PathBuf>,
    /// Store used for concept-based emotion tagging.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    store: PathBuf,
    /// JSON search request.
    #[arg(long)]
    request: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Write result.json here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Pair-style or concept-style judgments.
    #[arg(long)]
    judgments: PathBuf,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildLutArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    campaigns: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    /// Campaign registry file; created on first registration.
    #[arg(long)]
    campaigns: Option<PathBuf>,
    /// LUT snapshot loaded at startup and rewritten after each build.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    contents: Option<usize>,
    #[arg(long)]
    scenes_per_content: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    /// Emit the 10-scene concept-annotated stand-in instead.
    #[arg(long)]
    val1: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    aggregation: AggregationConfig,
    policy: SafetyPolicy,
    metadata: MetadataParams,
    plan: PlanParams,
    ks: Option<Vec<usize>>,
    ap_variant: ApVariant,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(jsonl::read_json(p).with_context(|| format!("invalid config {}", p.display()))?),
        None => Ok(RunConfig::default()),
    }
}

fn parse_pairs(text: &str, threshold: bool) -> Result<BTreeMap<Modality, f64>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').with_context(|| format!("expected modality=value, got `{part}`"))?;
        let m: Modality = k.trim().parse()?;
        let v = if threshold {
            parse_bound(v).map_err(anyhow::Error::msg)?
        } else {
            v.trim().parse::<f64>().with_context(|| format!("bad weight `{v}`"))?
        };
        out.insert(m, v);
    }
    Ok(out)
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        let agg = &mut cfg.aggregation;
        if let Some(k) = self.top_k {
            agg.top_k = k;
        }
        if let Some(w) = &self.weights {
            agg.weights.extend(parse_pairs(w, false)?);
        }
        if let Some(t) = &self.thresholds {
            agg.thresholds.extend(parse_pairs(t, true)?);
        }
        agg.validate()?;
        Ok(cfg)
    }
}

struct LoadedStore {
    store: EmbeddingStore,
    scenes: Vec<SceneRecord>,
}

impl LoadedStore {
    fn open(dir: &Path) -> Result<Self> {
        let (store, report) = EmbeddingStore::load_jsonl(&dir.join("embeddings.jsonl"))
            .with_context(|| format!("loading store {}", dir.display()))?;
        if !report.rejected.is_empty() {
            bail!("{}: {} stored records rejected on load", dir.display(), report.rejected.len());
        }
        let scenes_path = dir.join("scenes.jsonl");
        let scenes = if scenes_path.exists() {
            jsonl::read(&scenes_path)?
        } else {
            Vec::new()
        };
        Ok(Self { store, scenes })
    }

    fn tags(&self) -> SceneTags {
        self.scenes
            .iter()
            .filter_map(|s| s.safety.clone().map(|t| (s.scene_id.clone(), t)))
            .collect()
    }

    fn boundaries(&self) -> Vec<SceneBoundary> {
        self.scenes
            .iter()
            .map(|s| SceneBoundary {
                content_id: s.content_id.clone(),
                scene_id: s.scene_id.clone(),
                start_s: s.start_s,
                end_s: s.end_s,
            })
            .collect()
    }
}

fn pick(explicit: &Option<PathBuf>, input: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| input.as_ref().map(|d| d.join(name)))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let boundaries_path = pick(&args.boundaries, &args.input, "boundaries.jsonl").context("--boundaries or --input required")?;
    let boundaries: Vec<SceneBoundary> = jsonl::read(&boundaries_path)?;
    let features: Vec<TimedFeature> = match pick(&args.features, &args.input, "features.jsonl") {
        Some(p) if p.exists() || args.features.is_some() => jsonl::read(&p)?,
        _ => Vec::new(),
    };
    let text_embeddings: Vec<EmbeddingRecord> = match pick(&args.text_embeddings, &args.input, "text_embeddings.jsonl") {
        Some(p) if p.exists() || args.text_embeddings.is_some() => jsonl::read(&p)?,
        _ => Vec::new(),
    };
    let metadata: Vec<SceneMetadata> = match pick(&args.metadata, &args.input, "metadata.jsonl") {
        Some(p) if p.exists() || args.metadata.is_some() => jsonl::read(&p)?,
        _ => Vec::new(),
    };
    let extras = SceneExtras {
        text_embeddings,
        metadata: metadata.into_iter().map(|m| (m.scene_id, (m.sentence, m.tags))).collect(),
    };
    let out = run_pipeline(&boundaries, &features, &extras, cfg.plan)?;
    for s in &out.skipped {
        tracing::warn!(scene = %s, "scene produced no embeddings");
    }
    let (store, report) = ingest_embeddings(out.records, None);
    for r in &report.rejected {
        tracing::warn!(?r.key, reason = %r.reason, "record rejected");
    }

    std::fs::create_dir_all(&args.store).with_context(|| format!("creating {}", args.store.display()))?;
    store.save_jsonl(&args.store.join("embeddings.jsonl"))?;
    jsonl::write(&args.store.join("scenes.jsonl"), &out.scenes)?;
    jsonl::write_json(
        &args.store.join("report.json"),
        &serde_json::json!({
            "version": store.version(),
            "scenes": out.scenes.len(),
            "skipped": out.skipped,
            "accepted": report.accepted,
            "dims": report.dims,
            "rejected": report.rejected,
        }),
    )?;
    println!(
        "store {} at {}: {} scenes, {} records, {} rejected",
        store.version(),
        args.store.display(),
        out.scenes.len(),
        report.total_accepted(),
        report.rejected.len()
    );
    Ok(())
}

fn read_opt<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let p = dir.join(name);
    if p.exists() {
        Ok(jsonl::read(&p)?)
    } else {
        Ok(Vec::new())
    }
}

fn metadata(args: MetadataArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dir = &args.input;
    let wordlist = match &args.wordlist {
        Some(p) => Wordlist::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => Wordlist::default(),
    };
    let action_map = args.action_map.as_deref().map(ActionClassMap::load).transpose()?;
    let inputs = MetadataInputs {
        detections: read_opt(dir, "detections.jsonl")?,
        places: read_opt(dir, "places.jsonl")?,
        actions: read_opt(dir, "actions.jsonl")?,
        action_map,
        captions: read_opt(dir, "captions.jsonl")?,
        entities: read_opt(dir, "entities.jsonl")?,
        text_emotions: read_opt(dir, "text_emotions.jsonl")?,
        profanity: read_opt(dir, "profanity.jsonl")?,
        hate: read_opt(dir, "hate.jsonl")?,
        wordlist,
        concepts: read_opt::<ConceptRecord>(dir, "concepts.jsonl")?,
    };
    let store = args.store.as_deref().map(LoadedStore::open).transpose()?;
    let out = run_metadata(&inputs, &cfg.metadata, store.as_ref().map(|s| &s.store))?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("metadata.jsonl");
    jsonl::write(&path, &out)?;
    println!("{} scenes -> {}", out.len(), path.display());
    Ok(())
}

fn search(args: SearchArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let loaded = LoadedStore::open(&args.store)?;
    let request: SearchRequest = jsonl::read_json(&args.request)?;
    let result = request.run(&loaded.store, &loaded.tags(), &cfg.aggregation, &cfg.policy)?;
    let text = serde_json::to_string_pretty(&result)?;
    match args.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            jsonl::write_json(&dir.join("result.json"), &result)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct RunLine<'a> {
    query_id: &'a str,
    scenes: &'a [String],
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let loaded = LoadedStore::open(&args.store)?;
    let queries: Vec<QueryRecord> = jsonl::read(&args.queries)?;
    let judgments = RelevanceJudgments::load(&args.judgments, &queries)?;
    let ks = args.ks.or(cfg.ks).unwrap_or_else(|| DEFAULT_KS.to_vec());
    let (report, run) = run_benchmark(
        &loaded.store,
        &loaded.tags(),
        &cfg.aggregation,
        &cfg.policy,
        &queries,
        &judgments,
        &ks,
        cfg.ap_variant,
    )?;
    report.write(&args.out)?;
    let lines: Vec<RunLine> = run.iter().map(|(q, s)| RunLine { query_id: q, scenes: s }).collect();
    jsonl::write(&args.out.join("run.jsonl"), &lines)?;
    print!("{}", report.render_table());
    Ok(())
}

fn build_lut(args: BuildLutArgs) -> Result<()> {
    let loaded = LoadedStore::open(&args.store)?;
    let campaigns: Vec<CampaignSpec> = jsonl::read(&args.campaigns)?;
    let mut registry = CampaignRegistry::new();
    for c in campaigns {
        let id = c.campaign_id.clone();
        if let Err(errs) = registry.register(c) {
            let msg: Vec<String> = errs.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
            bail!("campaign `{id}`: {}", msg.join("; "));
        }
    }
    let lut = build_context_lut(&loaded.store, &registry.specs(), &loaded.boundaries(), &loaded.tags())?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("lut.jsonl");
    lut.save(&path)?;
    println!("LUT {} with {} entries -> {}", lut.version(), lut.len(), path.display());
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<()> {
    let loaded = LoadedStore::open(&args.store)?;
    let registry = match &args.campaigns {
        Some(p) => CampaignRegistry::open(p)?,
        None => CampaignRegistry::new(),
    };
    let tags = loaded.tags();
    let boundaries = loaded.boundaries();
    let mut state = AppState::new(loaded.store, boundaries, tags, registry);
    if let Some(p) = args.lut {
        if p.exists() {
            let lut = ContextLut::load(&p)?;
            tracing::info!(version = lut.version(), entries = lut.len(), "loaded LUT snapshot");
            state = state.with_lut(lut);
        }
        state = state.with_snapshot(p);
    }
    contextiq::ad::serve(Arc::new(state), args.addr).await?;
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let mut params = SynthParams {
        seed: args.seed,
        ..SynthParams::default()
    };
    if args.val1 {
        params.contents = 1;
        params.scenes_per_content = 10;
        params.queries = 5;
    }
    params.contents = args.contents.unwrap_or(params.contents);
    params.scenes_per_content = args.scenes_per_content.unwrap_or(params.scenes_per_content);
    params.dim = args.dim.unwrap_or(params.dim);
    params.queries = args.queries.unwrap_or(params.queries);
    let corpus = synth::generate(params)?;
    corpus.write_dir(&args.out)?;
    println!(
        "{} scenes, {} queries (seed {}) -> {}",
        corpus.boundaries.len(),
        corpus.queries.len(),
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("CONTEXTIQ_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Metadata(a) => metadata(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::BuildLut(a) => build_lut(a),
        Command::Serve(a) => tokio::runtime::Runtime::new()?.block_on(serve(a)),
        Command::Synth(a) => synth_cmd(a),
    }
}
