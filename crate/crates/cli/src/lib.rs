//! Command-line front end for the trajkit pipeline. Every file-producing
//! subcommand also writes `<out>.manifest.json`.

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use trajkit::augment::{self, EmbeddingClient, HashingEmbedder, PoolConfig, ToolPool};
use trajkit::clean::{self, ApproxTokenCounter, CleanConfig, DEFAULT_TOKEN_LIMIT};
use trajkit::curation::{self, QueryDifficulty, TierCutoffs, TieredQuery};
use trajkit::io;
use trajkit::judge::{self, ConstantJudge, Judge, JudgeClient, JudgeJob, RetryPolicy};
use trajkit::metrics;
use trajkit::preference::{self, PreferencePair};
use trajkit::remote::{RemoteChatModel, RemoteEmbedder, RemoteJudge};
use trajkit::rollout::{self, ChatModel, FixtureExecutor, FixtureRecord, ReplayModel, RolloutConfig, RolloutJob};
use trajkit::train::{self, Split};
use trajkit::{JudgedMetric, MetricReport, Query, ToolCatalog, Trajectory};

use config::PipelineConfig;
use manifest::ManifestBuilder;

#[derive(Debug, Parser)]
#[command(name = "trajkit", version, about = "Curate, score and export tool-calling trajectories")]
pub struct Cli {
    /// TOML pipeline config. Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// tracing filter, e.g. `info` or `trajkit=debug`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize and filter a raw trajectory corpus.
    Clean(CleanArgs),
    /// Algorithmic metrics of candidates against golden trajectories.
    Score(ScoreArgs),
    /// Fill LLM-judged metrics into metric reports.
    Judge(JudgeArgs),
    /// Pick one golden trajectory per query from its candidates.
    SelectGolden(SelectGoldenArgs),
    /// Per-query difficulty scores.
    Difficulty(DifficultyArgs),
    /// Assign easy/medium/hard tiers to difficulty scores.
    Tier(TierArgs),
    /// Stratified sample over tier and outcome.
    Sample(SampleArgs),
    /// Build a distractor tool pool for every example.
    Augment(AugmentArgs),
    /// Split examples into SFT and preference sets.
    Split(SplitArgs),
    /// Roll out a policy model against fixture tools.
    Rollout(RolloutArgs),
    /// Judge references against rollouts and keep chosen-better pairs.
    Pair(PairArgs),
    /// Write training records with token masks.
    Export(ExportArgs),
    /// Load queries, candidates, reports or selections into a service data dir.
    Import(ImportArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub token_limit: Option<usize>,
    /// File holding the system prompt to substitute. Defaults to the built-in prompt.
    #[arg(long)]
    pub generic_prompt: Option<PathBuf>,
    /// Tool catalog whose schemas count toward the length limit.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub golden: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Stub,
    Remote,
}

#[derive(Debug, Args)]
pub struct JudgeOpts {
    /// `remote` reads TRAJKIT_JUDGE_URL / _MODEL / _API_KEY.
    #[arg(long = "judge", value_enum)]
    pub backend: Option<Backend>,
    /// Fixed reply for the stub backend.
    #[arg(long)]
    pub stub_reply: Option<String>,
    #[arg(long)]
    pub retries: Option<u32>,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// `all` or a comma-separated list such as `pass_rate,answer_quality`.
    #[arg(long, default_value = "all")]
    pub metrics: String,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub golden: Option<PathBuf>,
    /// Query records; supplies reference answers.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Existing algorithmic reports to fill in.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub judge: JudgeOpts,
}

#[derive(Debug, Args)]
pub struct SelectGoldenArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one `{query_id, candidate, source_model}` line per query.
    #[arg(long)]
    pub selections: Option<PathBuf>,
    #[command(flatten)]
    pub judge: JudgeOpts,
}

#[derive(Debug, Args)]
pub struct DifficultyArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub trajectories: PathBuf,
    /// `{query_id, source_model, correct}` lines.
    #[arg(long)]
    pub correctness: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CutoffKind {
    Tercile,
    Percentile,
}

#[derive(Debug, Args)]
pub struct TierArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `percentile` uses the literal 33rd/66th percentiles.
    #[arg(long, value_enum, default_value = "tercile")]
    pub cutoffs: CutoffKind,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub tiers: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub success_frac: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderKind {
    Hashing,
    Remote,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Trajectories whose called tools seed each pool.
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub similar_frac: Option<f64>,
    /// Embedding cache (JSONL), reused when tool text is unchanged.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub frac_sft: Option<f64>,
    #[arg(long)]
    pub sft_out: PathBuf,
    #[arg(long)]
    pub pref_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long)]
    pub fixtures: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub max_turns: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// `remote` (TRAJKIT_POLICY_*) or `replay:<trajectories.jsonl>`.
    #[arg(long, default_value = "remote")]
    pub model: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub rollouts: PathBuf,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub judge: JudgeOpts,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_parser = parse_split)]
    pub split: Split,
    /// Trajectories for `sft`, preference pairs for `pref`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub pools: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Judge selections as written by `select-golden --selections`.
    #[arg(long)]
    pub selections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    #[arg(long)]
    pub data: PathBuf,
    /// Enable `/revise` with the TRAJKIT_POLICY_* model.
    #[arg(long)]
    pub reviser: bool,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "sft" => Ok(Split::Sft),
        "pref" | "preference" => Ok(Split::Preference),
        other => Err(format!("unknown split {other:?} (expected sft or pref)")),
    }
}

/// One line of `select-golden --selections`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSelection {
    pub query_id: String,
    /// 0-based index among the query's candidates, in file order.
    pub candidate: usize,
    pub source_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessRecord {
    pub query_id: String,
    pub source_model: String,
    pub correct: bool,
}

struct Ctx {
    cfg: PipelineConfig,
    seed: u64,
}

pub fn log_filter(cli: &Cli) -> Result<String> {
    let cfg = load_config(cli.config.as_deref())?;
    Ok(cli.log_level.clone().or(cfg.log_level).unwrap_or_else(|| "info".into()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map(PipelineConfig::load).transpose().map(Option::unwrap_or_default)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        cfg,
    };
    let manifest_cfg = cli.config.clone();
    let with_cfg = |b: ManifestBuilder| b.input_opt(manifest_cfg.as_ref());
    match cli.command {
        Command::Clean(a) => cmd_clean(&ctx, a, with_cfg),
        Command::Score(a) => cmd_score(a, with_cfg),
        Command::Judge(a) => cmd_judge(&ctx, a, with_cfg),
        Command::SelectGolden(a) => cmd_select_golden(&ctx, a, with_cfg),
        Command::Difficulty(a) => cmd_difficulty(a, with_cfg),
        Command::Tier(a) => cmd_tier(a, with_cfg),
        Command::Sample(a) => cmd_sample(&ctx, a, with_cfg),
        Command::Augment(a) => cmd_augment(&ctx, a, with_cfg),
        Command::Split(a) => cmd_split(&ctx, a, with_cfg),
        Command::Rollout(a) => cmd_rollout(&ctx, a, with_cfg),
        Command::Pair(a) => cmd_pair(&ctx, a, with_cfg),
        Command::Export(a) => cmd_export(a, with_cfg),
        Command::Import(a) => cmd_import(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    io::read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    io::write_jsonl(path, records).with_context(|| format!("writing {}", path.display()))
}

fn load_catalog(path: &Path) -> Result<ToolCatalog> {
    ToolCatalog::from_json(&read_text(path)?).with_context(|| format!("reading catalog {}", path.display()))
}

fn check_frac(name: &str, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        bail!("{name} must be within [0, 1], got {v}");
    }
    Ok(v)
}

fn cmd_clean(ctx: &Ctx, a: CleanArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let raw = read_text(&a.input)?;
    let prompt_path = a.generic_prompt.clone().or_else(|| ctx.cfg.clean.generic_prompt.clone());
    let mut cc = CleanConfig {
        token_limit: a.token_limit.or(ctx.cfg.clean.token_limit).unwrap_or(DEFAULT_TOKEN_LIMIT),
        ..CleanConfig::default()
    };
    if let Some(p) = &prompt_path {
        cc.generic_prompt = read_text(p)?;
    }
    if let Some(c) = &a.catalog {
        cc.tool_context = load_catalog(c)?.tools().to_vec();
    }
    let (kept, report) = clean::clean_pipeline(&raw, &cc, &ApproxTokenCounter);
    write_records(&a.out, &kept)?;
    std::fs::write(&a.report, serde_json::to_string_pretty(&report)? + "\n")?;
    tracing::info!(input = report.input, retained = report.retained, "cleaned");
    m(ManifestBuilder::new("clean"))
        .param("token_limit", cc.token_limit)
        .input(&a.input)
        .input_opt(prompt_path.as_ref())
        .input_opt(a.catalog.as_ref())
        .summary(&report)
        .write(&[a.out, a.report])?;
    Ok(())
}

/// Golden trajectories by query id; duplicates are an error.
fn golden_index(golden: Vec<Trajectory>) -> Result<HashMap<String, Trajectory>> {
    let mut out = HashMap::new();
    for g in golden {
        let id = g.query_id.clone();
        if out.insert(id.clone(), g).is_some() {
            bail!("more than one golden trajectory for query {id}");
        }
    }
    Ok(out)
}

fn cmd_score(a: ScoreArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let candidates: Vec<Trajectory> = read_records(&a.candidates)?;
    let golden = golden_index(read_records(&a.golden)?)?;
    let mut missing = 0usize;
    let reports: Vec<MetricReport> = candidates
        .iter()
        .filter_map(|c| match golden.get(&c.query_id) {
            Some(g) => Some(metrics::score_algorithmic(c, g)),
            None => {
                missing += 1;
                tracing::warn!(query = %c.query_id, "no golden trajectory; skipping candidate");
                None
            }
        })
        .collect();
    write_records(&a.out, &reports)?;
    m(ManifestBuilder::new("score"))
        .input(&a.candidates)
        .input(&a.golden)
        .summary(serde_json::json!({"scored": reports.len(), "skipped_without_golden": missing}))
        .write(&[a.out])?;
    Ok(())
}

fn parse_metrics(spec: &str) -> Result<Vec<JudgedMetric>> {
    if spec.trim() == "all" {
        return Ok(JudgedMetric::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let metric = JudgedMetric::from_str(part)?;
        if !out.contains(&metric) {
            out.push(metric);
        }
    }
    if out.is_empty() {
        bail!("--metrics names no metric");
    }
    Ok(out)
}

fn build_judge(ctx: &Ctx, o: &JudgeOpts) -> Result<Judge<Arc<dyn JudgeClient>>> {
    let stub_reply = o.stub_reply.clone().or_else(|| ctx.cfg.judge.stub_reply.clone());
    let backend = match (o.backend, ctx.cfg.judge.backend.as_deref()) {
        (Some(b), _) => b,
        (None, Some(s)) => Backend::from_str(s, true).map_err(|e| anyhow::anyhow!("judge.backend: {e}"))?,
        (None, None) if stub_reply.is_some() => Backend::Stub,
        (None, None) => Backend::Remote,
    };
    let client: Arc<dyn JudgeClient> = match backend {
        Backend::Stub => Arc::new(ConstantJudge(stub_reply.context("the stub judge needs --stub-reply")?)),
        Backend::Remote => Arc::new(RemoteJudge::from_env()?),
    };
    let mut retry = RetryPolicy::default();
    if let Some(n) = o.retries.or(ctx.cfg.judge.retries) {
        retry.attempts = n;
    }
    if backend == Backend::Stub {
        retry.backoff = std::time::Duration::ZERO;
    }
    Ok(Judge::new(client).with_retry(retry))
}

fn query_index(path: Option<&Path>) -> Result<HashMap<String, Query>> {
    let Some(p) = path else { return Ok(HashMap::new()) };
    Ok(read_records::<Query>(p)?.into_iter().map(|q| (q.id.clone(), q)).collect())
}

fn query_for(queries: &HashMap<String, Query>, t: &Trajectory) -> Query {
    queries
        .get(&t.query_id)
        .cloned()
        .unwrap_or_else(|| Query::new(t.query_id.clone(), t.user_query(), ""))
}

fn cmd_judge(ctx: &Ctx, a: JudgeArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let judge = build_judge(ctx, &a.judge)?;
    let candidates: Vec<Trajectory> = read_records(&a.candidates)?;
    let golden = match &a.golden {
        Some(p) => golden_index(read_records(p)?)?,
        None => HashMap::new(),
    };
    let queries = query_index(a.queries.as_deref())?;
    let mut reports: HashMap<(String, String), MetricReport> = HashMap::new();
    if let Some(p) = &a.reports {
        for r in read_records::<MetricReport>(p)? {
            reports.insert((r.query_id.clone(), r.source_model.clone()), r);
        }
    }
    let jobs: Vec<JudgeJob> = candidates
        .iter()
        .map(|c| JudgeJob {
            query: query_for(&queries, c),
            candidate: c.clone(),
            golden: golden.get(&c.query_id).cloned(),
            report: reports.get(&(c.query_id.clone(), c.source_model.clone())).cloned(),
        })
        .collect();
    let out = judge::judge_corpus(&judge, &jobs, &metrics);
    let incomplete = out.iter().filter(|r| !r.failed_metrics.is_empty()).count();
    write_records(&a.out, &out)?;
    let means: BTreeMap<String, f64> = judge::judged_means(&out).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    m(ManifestBuilder::new("judge"))
        .param("metrics", metrics.iter().map(|x| x.as_str()).collect::<Vec<_>>())
        .input(&a.candidates)
        .input_opt(a.golden.as_ref())
        .input_opt(a.queries.as_ref())
        .input_opt(a.reports.as_ref())
        .summary(serde_json::json!({
            "reports": out.len(),
            "with_failed_metrics": incomplete,
            "mean_overall": metrics::mean_overall(&out),
            "judged_means": means,
        }))
        .write(&[a.out])?;
    Ok(())
}

fn cmd_select_golden(ctx: &Ctx, a: SelectGoldenArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let judge = build_judge(ctx, &a.judge)?;
    let queries: Vec<Query> = read_records(&a.queries)?;
    let candidates: Vec<Trajectory> = read_records(&a.candidates)?;
    let mut by_query: HashMap<&str, Vec<Trajectory>> = HashMap::new();
    for c in &candidates {
        by_query.entry(c.query_id.as_str()).or_default().push(c.clone());
    }
    let mut golden = Vec::new();
    let mut selections = Vec::new();
    let mut failures = Vec::new();
    for q in &queries {
        let Some(cs) = by_query.get(q.id.as_str()) else {
            tracing::warn!(query = %q.id, "no candidates");
            continue;
        };
        match judge.select_golden(q, cs) {
            Ok(i) => {
                selections.push(JudgeSelection {
                    query_id: q.id.clone(),
                    candidate: i,
                    source_model: cs[i].source_model.clone(),
                });
                golden.push(cs[i].clone());
            }
            Err(e) => {
                tracing::warn!(query = %q.id, error = %e, "golden selection failed");
                failures.push(q.id.clone());
            }
        }
    }
    write_records(&a.out, &golden)?;
    let mut outputs = vec![a.out];
    if let Some(p) = a.selections {
        write_records(&p, &selections)?;
        outputs.push(p);
    }
    m(ManifestBuilder::new("select-golden"))
        .input(&a.queries)
        .input(&a.candidates)
        .summary(serde_json::json!({"selected": golden.len(), "failed": failures}))
        .write(&outputs)?;
    Ok(())
}

fn cmd_difficulty(a: DifficultyArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let queries: Vec<Query> = read_records(&a.queries)?;
    let trajectories: Vec<Trajectory> = read_records(&a.trajectories)?;
    let mut correctness = HashMap::new();
    if let Some(p) = &a.correctness {
        for r in read_records::<CorrectnessRecord>(p)? {
            correctness.insert((r.query_id, r.source_model), r.correct);
        }
    }
    let scores = curation::score_corpus(&queries, &trajectories, &correctness);
    write_records(&a.out, &scores)?;
    m(ManifestBuilder::new("difficulty"))
        .input(&a.queries)
        .input(&a.trajectories)
        .input_opt(a.correctness.as_ref())
        .summary(serde_json::json!({"queries": scores.len()}))
        .write(&[a.out])?;
    Ok(())
}

fn cmd_tier(a: TierArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let scores: Vec<QueryDifficulty> = read_records(&a.scores)?;
    let cutoffs = match a.cutoffs {
        CutoffKind::Tercile => TierCutoffs::default(),
        CutoffKind::Percentile => TierCutoffs::percentiles(33, 66),
    };
    let tiered = curation::assign_tiers(&scores, cutoffs)?;
    write_records(&a.out, &tiered)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in &tiered {
        *counts.entry(t.tier.to_string()).or_default() += 1;
    }
    m(ManifestBuilder::new("tier"))
        .param("cutoffs", cutoffs)
        .input(&a.scores)
        .summary(&counts)
        .write(&[a.out])?;
    Ok(())
}

fn cmd_sample(ctx: &Ctx, a: SampleArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let pool: Vec<TieredQuery> = read_records(&a.tiers)?;
    let n = a.n.or(ctx.cfg.sample.n).unwrap_or(800);
    let frac = check_frac("success-frac", a.success_frac.or(ctx.cfg.sample.success_frac).unwrap_or(0.55))?;
    let result = curation::stratified_sample(&pool, n, frac, ctx.seed)?;
    for w in &result.warnings {
        tracing::warn!("{w}");
    }
    let wanted: HashSet<&str> = result.selected.iter().map(String::as_str).collect();
    let selected: Vec<&TieredQuery> = pool.iter().filter(|q| wanted.contains(q.query_id.as_str())).collect();
    write_records(&a.out, &selected)?;
    let per_tier: BTreeMap<String, serde_json::Value> = result
        .per_tier
        .iter()
        .map(|(t, (s, f))| (t.to_string(), serde_json::json!({"successful": s, "failed": f})))
        .collect();
    m(ManifestBuilder::new("sample"))
        .seed(ctx.seed)
        .param("n", n)
        .param("success_frac", frac)
        .input(&a.tiers)
        .summary(serde_json::json!({"selected": selected.len(), "per_tier": per_tier, "warnings": result.warnings}))
        .write(&[a.out])?;
    Ok(())
}

fn cmd_augment(ctx: &Ctx, a: AugmentArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let examples: Vec<Trajectory> = read_records(&a.examples)?;
    let catalog = load_catalog(&a.catalog)?;
    let cfg = PoolConfig {
        size: a.pool_size.or(ctx.cfg.augment.pool_size).unwrap_or(30),
        similar_frac: check_frac("similar-frac", a.similar_frac.or(ctx.cfg.augment.similar_frac).unwrap_or(0.5))?,
    };
    let embedder_kind = match (a.embedder, ctx.cfg.augment.embedder.as_deref()) {
        (Some(k), _) => k,
        (None, Some(s)) => EmbedderKind::from_str(s, true).map_err(|e| anyhow::anyhow!("augment.embedder: {e}"))?,
        (None, None) => EmbedderKind::Hashing,
    };
    let embedder: Box<dyn EmbeddingClient> = match embedder_kind {
        EmbedderKind::Hashing => Box::new(HashingEmbedder::default()),
        EmbedderKind::Remote => Box::new(RemoteEmbedder::from_env()?),
    };
    let cache = a.cache.clone().or_else(|| ctx.cfg.augment.cache.clone());
    let vectors = augment::embed_catalog(&catalog, embedder.as_ref(), cache.as_deref(), RetryPolicy::default())?;
    let mut seen = HashSet::new();
    let mut pools: Vec<ToolPool> = Vec::with_capacity(examples.len());
    for t in &examples {
        if !seen.insert(t.query_id.as_str()) {
            bail!("duplicate example id {}", t.query_id);
        }
        pools.push(augment::build_pool(&t.query_id, &augment::called_tools(t), &catalog, &vectors, cfg, ctx.seed)?);
    }
    write_records(&a.out, &pools)?;
    m(ManifestBuilder::new("augment"))
        .seed(ctx.seed)
        .param("pool_size", cfg.size)
        .param("similar_frac", cfg.similar_frac)
        .param("embedder", format!("{embedder_kind:?}").to_lowercase())
        .input(&a.examples)
        .input(&a.catalog)
        .summary(serde_json::json!({"pools": pools.len()}))
        .write(&[a.out])?;
    Ok(())
}

fn cmd_split(ctx: &Ctx, a: SplitArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let examples: Vec<Trajectory> = read_records(&a.input)?;
    let frac = check_frac("frac-sft", a.frac_sft.or(ctx.cfg.split.frac_sft).unwrap_or(0.5))?;
    let (sft, pref) = preference::split_corpus(&examples, frac, ctx.seed)?;
    write_records(&a.sft_out, &sft)?;
    write_records(&a.pref_out, &pref)?;
    m(ManifestBuilder::new("split"))
        .seed(ctx.seed)
        .param("frac_sft", frac)
        .input(&a.input)
        .summary(serde_json::json!({"sft": sft.len(), "pref": pref.len()}))
        .write(&[a.sft_out, a.pref_out])?;
    Ok(())
}

fn load_model(spec: &str) -> Result<Box<dyn ChatModel>> {
    if spec == "remote" {
        return Ok(Box::new(RemoteChatModel::from_env()?));
    }
    if let Some(path) = spec.strip_prefix("replay:") {
        let recordings: Vec<Trajectory> = read_records(Path::new(path))?;
        return Ok(Box::new(ReplayModel::new("replay", &recordings)));
    }
    bail!("unknown --model {spec:?} (expected remote or replay:<path>)")
}

fn cmd_rollout(ctx: &Ctx, a: RolloutArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let queries = query_index(Some(&a.queries))?;
    let pools: Vec<ToolPool> = read_records(&a.pools)?;
    let fixtures: Vec<FixtureRecord> = read_records(&a.fixtures)?;
    let catalog = load_catalog(&a.catalog)?;
    let r = &ctx.cfg.rollout;
    let defaults = RolloutConfig::default();
    let cfg = RolloutConfig {
        max_turns: a.max_turns.or(r.max_turns).unwrap_or(defaults.max_turns),
        top_p: a.top_p.or(r.top_p).unwrap_or(defaults.top_p),
        temperature: a.temperature.or(r.temperature).unwrap_or(defaults.temperature),
        ..defaults
    };
    cfg.validate()?;
    let mut missing = Vec::new();
    let jobs: Vec<RolloutJob> = pools
        .iter()
        .filter_map(|p| match queries.get(&p.example_id) {
            Some(q) => Some(RolloutJob {
                query: q.clone(),
                tools: p.specs(&catalog),
            }),
            None => {
                missing.push(p.example_id.clone());
                None
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(trajkit::Error::Dangling { ids: missing }).context("pools without a matching query");
    }
    let model = load_model(&a.model)?;
    let executor = FixtureExecutor::new(&fixtures);
    let concurrency = a.concurrency.or(r.concurrency).unwrap_or(4).max(1);
    let trajectories = rollout::run_rollouts(&jobs, model.as_ref(), &executor, &ApproxTokenCounter, &cfg, concurrency)?;
    let failed = trajectories.iter().filter(|t| t.failed).count();
    write_records(&a.out, &trajectories)?;
    let mut b = m(ManifestBuilder::new("rollout"))
        .param("max_turns", cfg.max_turns)
        .param("top_p", cfg.top_p)
        .param("temperature", cfg.temperature)
        .param("model", &a.model)
        .input(&a.queries)
        .input(&a.pools)
        .input(&a.fixtures)
        .input(&a.catalog);
    if let Some(p) = a.model.strip_prefix("replay:") {
        b = b.input(Path::new(p));
    }
    b.summary(serde_json::json!({"rollouts": trajectories.len(), "failed": failed}))
        .write(&[a.out])?;
    Ok(())
}

fn cmd_pair(ctx: &Ctx, a: PairArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let judge = build_judge(ctx, &a.judge)?;
    let refs: Vec<Trajectory> = read_records(&a.refs)?;
    let rollouts: Vec<Trajectory> = read_records(&a.rollouts)?;
    let catalog = load_catalog(&a.catalog)?;
    let pools: HashMap<String, ToolPool> = match &a.pools {
        Some(p) => read_records::<ToolPool>(p)?.into_iter().map(|p| (p.example_id.clone(), p)).collect(),
        None => HashMap::new(),
    };
    let outcome = preference::judge_and_pair(&judge, &refs, &rollouts, &pools, &catalog, ctx.seed);
    write_records(&a.out, &outcome.pairs)?;
    m(ManifestBuilder::new("pair"))
        .seed(ctx.seed)
        .input(&a.refs)
        .input(&a.rollouts)
        .input_opt(a.pools.as_ref())
        .input(&a.catalog)
        .summary(serde_json::json!({
            "pairs": outcome.pairs.len(),
            "ties": outcome.ties,
            "rejected_wins": outcome.rejected_wins,
            "skipped": outcome.skipped,
            "skipped_ids": outcome.skipped_ids,
        }))
        .write(&[a.out])?;
    Ok(())
}

fn cmd_export(a: ExportArgs, m: impl Fn(ManifestBuilder) -> ManifestBuilder) -> Result<()> {
    let pools: Vec<ToolPool> = read_records(&a.pools)?;
    let meta = match a.split {
        Split::Sft => {
            let examples: Vec<Trajectory> = read_records(&a.input)?;
            train::write_sft_file(&a.out, &examples, &pools, &ApproxTokenCounter)?
        }
        Split::Preference => {
            let pairs: Vec<PreferencePair> = read_records(&a.input)?;
            train::write_preference_file(&a.out, &pairs, &pools, &ApproxTokenCounter)?
        }
    };
    m(ManifestBuilder::new("export"))
        .param("split", a.split)
        .input(&a.input)
        .input(&a.pools)
        .summary(&meta)
        .write(&[a.out.clone(), train::meta_path(&a.out)])?;
    Ok(())
}

fn cmd_import(a: ImportArgs) -> Result<()> {
    let mut store = trajkit_service::Store::open(&a.data)?;
    if let Some(p) = &a.queries {
        for q in read_records::<Query>(p)? {
            store.add_query(q)?;
        }
    }
    if let Some(p) = &a.candidates {
        for t in read_records::<Trajectory>(p)? {
            let qid = t.query_id.clone();
            store.add_candidate(&qid, t, None)?;
        }
    }
    if let Some(p) = &a.reports {
        for r in read_records::<MetricReport>(p)? {
            store.add_report(r)?;
        }
    }
    if let Some(p) = &a.selections {
        for s in read_records::<JudgeSelection>(p)? {
            store.select(&s.query_id, trajkit_service::JUDGE_ANNOTATOR, &serde_json::json!(s.candidate))?;
        }
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let reviser: Option<Arc<dyn ChatModel>> = if a.reviser {
        Some(Arc::new(RemoteChatModel::from_env()?))
    } else {
        None
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(trajkit_service::serve(a.addr, &a.data, reviser))?;
    Ok(())
}

/// Machine-readable failure report printed to stderr.
pub fn error_report(err: &anyhow::Error) -> serde_json::Value {
    let kind = err.chain().find_map(|e| e.downcast_ref::<trajkit::Error>()).map(|e| match e {
        trajkit::Error::Parse { .. } => "parse",
        trajkit::Error::Validation(_) => "validation",
        trajkit::Error::InvalidTrajectory(_) => "invalid_trajectory",
        trajkit::Error::JudgeFormat { .. } => "judge_format",
        trajkit::Error::Judge(_) => "judge",
        trajkit::Error::Embedding(_) => "embedding",
        trajkit::Error::Model(_) => "model",
        trajkit::Error::Dangling { .. } => "dangling",
        trajkit::Error::Io(_) => "io",
        trajkit::Error::Json(_) => "json",
    });
    serde_json::json!({
        "error": {
            "kind": kind.unwrap_or("other"),
            "message": err.to_string(),
            "causes": err.chain().skip(1).map(|e| e.to_string()).collect::<Vec<_>>(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_lists() {
        assert_eq!(parse_metrics("all").unwrap().len(), 6);
        assert_eq!(
            parse_metrics("pass_rate, answer_quality,pass_rate").unwrap(),
            vec![JudgedMetric::PassRate, JudgedMetric::AnswerQuality]
        );
        assert!(parse_metrics("bogus").is_err());
        assert!(parse_metrics(",").is_err());
    }

    #[test]
    fn split_names() {
        assert_eq!(parse_split("pref").unwrap(), Split::Preference);
        assert!(parse_split("dpo").is_err());
    }

    #[test]
    fn error_kind_from_chain() {
        let e = anyhow::Error::new(trajkit::Error::Dangling { ids: vec!["q1".into()] }).context("exporting");
        let r = error_report(&e);
        assert_eq!(r["error"]["kind"], "dangling");
        assert_eq!(r["error"]["message"], "exporting");
    }

    #[test]
    fn cli_parses_spec_lines() {
        Cli::try_parse_from(["trajkit", "sample", "--tiers", "t", "--n", "800", "--seed", "3", "--success-frac", "0.55", "--out", "o"]).unwrap();
        Cli::try_parse_from(["trajkit", "export", "--split", "pref", "--in", "p", "--pools", "x", "--out", "o"]).unwrap();
        let err = Cli::try_parse_from(["trajkit", "frobnicate"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
