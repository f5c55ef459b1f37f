//! The `autoskill` command line.

pub mod archive;
pub mod ingest;
pub mod stats;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use autoskill_core::bank::{normalize_user_id, BankScope, SkillBank};
use autoskill_core::config::AppConfig;
use autoskill_core::serving::{render_context, Engine};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::stats::KeywordMap;

#[derive(Debug, Parser)]
#[command(name = "autoskill", version, about = "Skill bank tooling and the AutoSkill proxy")]
pub struct Cli {
    /// Skill bank root (overrides config and AUTOSKILL_BANK_ROOT).
    #[arg(long, global = true)]
    pub bank: Option<PathBuf>,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// User whose skills to operate on.
    #[arg(long, global = true)]
    pub user: Option<String>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay conversation logs through skill extraction and maintenance.
    Ingest(IngestArgs),
    /// Rank the user's skills against a query.
    Search(QueryArgs),
    /// Print the context block that would be injected for a query.
    RenderContext(QueryArgs),
    /// Skill counts, tags, versions and keyword mentions.
    Stats(StatsArgs),
    /// Copy a scope's skills into a directory.
    Export(ExportArgs),
    /// Add skill artifacts from a directory.
    Import(ImportArgs),
    /// Run the proxy and admin API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecordFormat {
    /// One JSON object per line with a `messages` array.
    Openai,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// A `.jsonl` file or a directory of them.
    pub path: PathBuf,
    /// Skip conversations with fewer user messages than this.
    #[arg(long, default_value_t = 0)]
    pub min_turns: usize,
    #[arg(long, value_enum, default_value = "openai")]
    pub format: RecordFormat,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub query: String,
    /// Dense weight in the fused score, 0 to 1
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Minimum fused score for a skill to be selected
    #[arg(long)]
    pub eta: Option<f64>,
    /// Maximum number of skills selected
    #[arg(long)]
    pub k: Option<usize>,
    /// Drop selected skills whose raw cosine similarity is below this
    #[arg(long)]
    pub dense_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeSelector {
    /// Every user plus common skills.
    All,
    /// The selected user only.
    User,
    /// Common skills only.
    Common,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub scope: ScopeSelector,
    /// Comma-separated keywords to count mentions of.
    #[arg(long, value_delimiter = ',', conflicts_with = "keyword_file")]
    pub keywords: Vec<String>,
    /// TOML file of keyword groups (defaults to social platforms).
    #[arg(long)]
    pub keyword_file: Option<PathBuf>,
    /// TOML file mapping keyword groups to categories.
    #[arg(long)]
    pub categories: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub out: PathBuf,
    /// Export common skills instead of the user's.
    #[arg(long)]
    pub common: bool,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    pub archive: PathBuf,
    /// Import into common skills instead of the user's.
    #[arg(long)]
    pub common: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address (overrides config and AUTOSKILL_LISTEN).
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

/// Global flags applied to the loaded config.
pub fn load_config(cli: &Cli) -> Result<AppConfig, CliError> {
    let mut config = AppConfig::load(cli.config.as_deref()).map_err(failed)?;
    if let Some(bank) = &cli.bank {
        config.bank.root = Some(bank.clone());
    }
    Ok(config)
}

fn user_id(cli: &Cli, config: &AppConfig) -> Result<String, CliError> {
    match &cli.user {
        Some(raw) => normalize_user_id(raw).ok_or_else(|| CliError::Usage(format!("invalid --user {raw:?}"))),
        None => Ok(config.serving.default_user.clone()),
    }
}

fn require_bank(config: &AppConfig) -> Result<(), CliError> {
    let root = config.bank_root();
    if root.is_dir() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "skill bank {} does not exist",
            root.display()
        )))
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(failed)?;
    writeln!(out, "{text}").map_err(failed)
}

fn apply_weights(config: &mut AppConfig, args: &QueryArgs) -> Result<(), CliError> {
    let w = &mut config.retrieval;
    if let Some(v) = args.lambda {
        w.lambda = v;
    }
    if let Some(v) = args.eta {
        w.eta = v;
    }
    if let Some(v) = args.k {
        w.k = v;
    }
    if args.dense_floor.is_some() {
        w.dense_floor = args.dense_floor;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct SearchRow {
    pub rank: usize,
    pub id: String,
    pub name: String,
    pub scope: String,
    pub version: String,
    pub dense_raw: f64,
    pub lexical_raw: f64,
    pub dense_norm: f64,
    pub lexical_norm: f64,
    pub rel: f64,
    pub selected: bool,
}

fn render_search_table(rows: &[SearchRow]) -> String {
    let name_w = rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(4);
    let mut out = format!(
        "{:>4}  {:<36}  {:<name_w$}  {:>7}  {:>7}  {:>7}  sel\n",
        "rank", "id", "name", "dense", "lexical", "rel"
    );
    for r in rows {
        let pad = name_w - r.name.chars().count();
        out.push_str(&format!(
            "{:>4}  {:<36}  {}{}  {:>7.4}  {:>7.4}  {:>7.4}  {}\n",
            r.rank,
            r.id,
            r.name,
            " ".repeat(pad),
            r.dense_norm,
            r.lexical_norm,
            r.rel,
            if r.selected { "*" } else { "" }
        ));
    }
    out
}

async fn search(cli: &Cli, args: &QueryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = load_config(cli)?;
    apply_weights(&mut config, args)?;
    require_bank(&config)?;
    let user = BankScope::user(user_id(cli, &config)?).map_err(failed)?;
    let engine = Engine::from_config(config).map_err(failed)?;
    let retrieval = engine.retrieve_for_turn(&args.query, &user).await;
    if let Some(e) = retrieval.error {
        return Err(CliError::Failed(e));
    }
    let selected: Vec<_> = retrieval.selected.iter().map(|s| s.skill.id).collect();
    let rows: Vec<SearchRow> = retrieval
        .ranked
        .iter()
        .enumerate()
        .map(|(i, (s, indexed))| SearchRow {
            rank: i + 1,
            id: s.id.to_string(),
            name: indexed.skill.name.clone(),
            scope: indexed.scope.to_string(),
            version: indexed.skill.version.to_string(),
            dense_raw: s.dense_raw,
            lexical_raw: s.lexical_raw,
            dense_norm: s.dense_norm,
            lexical_norm: s.lexical_norm,
            rel: s.rel,
            selected: selected.contains(&s.id),
        })
        .collect();
    if cli.json {
        print_json(out, &rows)
    } else {
        out.write_all(render_search_table(&rows).as_bytes()).map_err(failed)
    }
}

async fn render(cli: &Cli, args: &QueryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = load_config(cli)?;
    apply_weights(&mut config, args)?;
    require_bank(&config)?;
    let user = BankScope::user(user_id(cli, &config)?).map_err(failed)?;
    let engine = Engine::from_config(config).map_err(failed)?;
    let retrieval = engine.retrieve_for_turn(&args.query, &user).await;
    if let Some(e) = retrieval.error {
        return Err(CliError::Failed(e));
    }
    let context = render_context(&args.query, retrieval.selected.iter().map(|s| &s.skill));
    if cli.json {
        print_json(out, &context)
    } else {
        out.write_all(context.text.as_bytes()).map_err(failed)
    }
}

async fn ingest(cli: &Cli, args: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let RecordFormat::Openai = args.format;
    let config = load_config(cli)?;
    let user = user_id(cli, &config)?;
    let inputs = ingest::collect_inputs(&args.path).map_err(failed)?;
    let engine = Engine::from_config(config).map_err(failed)?;
    let report = ingest::ingest(engine.scheduler().evolver(), &user, &inputs, args.min_turns)
        .await
        .map_err(failed)?;
    if cli.json {
        print_json(out, &report)
    } else {
        out.write_all(report.render().as_bytes()).map_err(failed)
    }
}

fn stats_cmd(cli: &Cli, args: &StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli)?;
    require_bank(&config)?;
    let bank = SkillBank::open(config.bank_root());
    let scopes = match args.scope {
        ScopeSelector::Common => vec![BankScope::Common],
        ScopeSelector::User => vec![BankScope::user(user_id(cli, &config)?).map_err(failed)?],
        ScopeSelector::All => {
            let mut scopes: Vec<BankScope> = bank
                .list_users()
                .map_err(failed)?
                .into_iter()
                .map(BankScope::User)
                .collect();
            scopes.push(BankScope::Common);
            scopes
        }
    };
    let keywords = match (&args.keyword_file, args.keywords.is_empty()) {
        (Some(path), _) => KeywordMap::load(path).map_err(failed)?,
        (None, false) => KeywordMap::from_keywords(&args.keywords),
        (None, true) => KeywordMap::from_toml(stats::DEFAULT_KEYWORDS).map_err(failed)?,
    };
    let categories = match &args.categories {
        Some(path) => KeywordMap::load(path).map_err(failed)?,
        None => KeywordMap::from_toml(stats::DEFAULT_CATEGORIES).map_err(failed)?,
    };
    let report = stats::compute(&bank, &scopes, &keywords, &categories).map_err(failed)?;
    if cli.json {
        print_json(out, &report)
    } else {
        out.write_all(stats::render(&report).as_bytes()).map_err(failed)
    }
}

fn target_scope(cli: &Cli, config: &AppConfig, common: bool) -> Result<BankScope, CliError> {
    if common {
        Ok(BankScope::Common)
    } else {
        BankScope::user(user_id(cli, config)?).map_err(failed)
    }
}

fn export_cmd(cli: &Cli, args: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli)?;
    require_bank(&config)?;
    let bank = SkillBank::open(config.bank_root());
    let scope = target_scope(cli, &config, args.common)?;
    let report = archive::export(&bank, &scope, &args.out).map_err(failed)?;
    if cli.json {
        print_json(out, &report)
    } else {
        writeln!(
            out,
            "exported {} skills from {} to {}",
            report.artifacts,
            report.scope,
            report.out.display()
        )
        .map_err(failed)
    }
}

fn import_cmd(cli: &Cli, args: &ImportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let bank = SkillBank::open(config.bank_root());
    let scope = target_scope(cli, &config, args.common)?;
    let report = archive::import(&bank, &scope, &args.archive).map_err(failed)?;
    if cli.json {
        print_json(out, &report)?;
    } else {
        out.write_all(report.render().as_bytes()).map_err(failed)?;
    }
    if report.rejected.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} artifact(s) rejected",
            report.rejected.len()
        )))
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down, finishing queued evolution");
}

async fn serve(cli: &Cli, args: &ServeArgs) -> Result<(), CliError> {
    let mut config = load_config(cli)?;
    if let Some(listen) = &args.listen {
        config.server.listen = listen.clone();
    }
    let addr = config.listen_addr().map_err(failed)?;
    let engine = Arc::new(Engine::from_config(config).map_err(failed)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Failed(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(failed)?;
    eprintln!("listening on {local}");
    let state = Arc::new(autoskill_proxy::ProxyState::from_env(engine));
    autoskill_proxy::serve(listener, state, shutdown_signal())
        .await
        .map_err(failed)
}

/// Run one command, writing its output to `out`.
pub async fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(raw) = &cli.user {
        if normalize_user_id(raw).is_none() {
            return Err(CliError::Usage(format!("invalid --user {raw:?}")));
        }
    }
    match &cli.command {
        Command::Ingest(args) => ingest(cli, args, out).await,
        Command::Search(args) => search(cli, args, out).await,
        Command::RenderContext(args) => render(cli, args, out).await,
        Command::Stats(args) => stats_cmd(cli, args, out),
        Command::Export(args) => export_cmd(cli, args, out),
        Command::Import(args) => import_cmd(cli, args, out),
        Command::Serve(args) => serve(cli, args).await,
    }
}
