//! `fademem` command line: run the synthetic benchmark, or drive a snapshot
//! store through observe/query/tick operations on a virtual clock.
//!
//! Exit codes: 0 success, 1 usage error, 2 config or snapshot error,
//! 3 oracle/remote error. Summaries go to stdout, diagnostics to stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fademem::benchmark::{
    generate_trace, read_jsonl, run_benchmark, run_fifo_baseline, validate_trace, write_jsonl,
    Category, EventKind, EventLabels, FifoReport, MetricsReport, TraceEvent, TraceParams,
};
use fademem::oracle::{RemoteOracle, RemoteOracleConfig};
use fademem::store::{LoggedOp, StoreOp};
use fademem::{
    ConfigError, EngineConfig, HashEmbedder, MemoryStore, MergeOracle, OracleError,
    RelationOracle, StoreError, Timestamp,
};

#[derive(Parser)]
#[command(
    name = "fademem",
    about = "Dual-layer agent memory engine with adaptive forgetting",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction trace, replay it through the engine,
    /// and write metrics, storage curves, and the final snapshot.
    Simulate(SimulateArgs),
    /// Append one memory to a snapshot store (runs the full pipeline).
    Observe(ObserveArgs),
    /// Ranked retrieval from a snapshot store.
    Query(QueryArgs),
    /// Advance the virtual clock, applying decay and pruning.
    Tick(TickArgs),
    /// Per-layer counts, strength histogram, and storage reduction so far.
    Stats(StoreArg),
    /// Write the store's operation log as a trace file.
    Export(ExportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Trace generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Virtual days to simulate.
    #[arg(long, default_value_t = 30)]
    days: u32,
    /// Engine config file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Conflict/merge oracle: the deterministic rules or a remote endpoint.
    #[arg(long, default_value = "rule", value_parser = ["rule", "remote"])]
    oracle: String,
    /// Output directory for metrics.json, metrics.csv, storage.csv,
    /// trace.jsonl, and snapshot.fmem.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated ranking depths for rp@k.
    #[arg(long, default_value = "5,10", value_delimiter = ',')]
    k: Vec<usize>,
    /// Replay an existing trace file instead of generating one.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct StoreArg {
    /// Snapshot path.
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct ObserveArgs {
    #[command(flatten)]
    store: StoreArg,
    /// Memory content.
    #[arg(long)]
    text: String,
    /// Virtual time in days; defaults to the store clock.
    #[arg(long)]
    at: Option<f64>,
    /// Engine config file used when the snapshot does not exist yet.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    store: StoreArg,
    /// Query text.
    #[arg(long)]
    text: String,
    /// How many results to return.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Virtual time in days; defaults to the store clock.
    #[arg(long)]
    at: Option<f64>,
}

#[derive(Args)]
struct TickArgs {
    #[command(flatten)]
    store: StoreArg,
    /// Days to advance the virtual clock by.
    #[arg(long)]
    days: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    store: StoreArg,
    /// Trace file to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

// ── Error-to-exit-code mapping ──────────────────────────────────────

enum CliError {
    Usage(String),
    Config(String),
    Oracle(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Oracle(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Oracle(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<fademem::snapshot::SnapshotError> for CliError {
    fn from(e: fademem::snapshot::SnapshotError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Oracle(e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Embed(fademem::embedding::EmbedError::Remote(_))
            | StoreError::Embed(fademem::embedding::EmbedError::MissingEnv(_)) => {
                CliError::Oracle(e.to_string())
            }
            StoreError::Snapshot(inner) => CliError::Config(inner.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<fademem::benchmark::RunError> for CliError {
    fn from(e: fademem::benchmark::RunError) -> Self {
        match e {
            fademem::benchmark::RunError::Store(inner) => inner.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<fademem::benchmark::TraceError> for CliError {
    fn from(e: fademem::benchmark::TraceError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() {
    // Die quietly when a pipe closes (e.g. `fademem stats | head`) instead
    // of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Observe(args) => observe(args),
        Command::Query(args) => query(args),
        Command::Tick(args) => tick(args),
        Command::Stats(args) => stats(args),
        Command::Export(args) => export(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fademem: {}", e.message());
            e.code()
        }
    }
}

// ── Shared plumbing ─────────────────────────────────────────────────

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig, CliError> {
    match path {
        Some(p) => Ok(EngineConfig::load(p)?),
        None => Ok(EngineConfig::default()),
    }
}

enum Oracles {
    Rule(fademem::RuleOracle),
    Remote(Box<RemoteOracle>),
}

impl Oracles {
    fn classifier(&self) -> &dyn RelationOracle {
        match self {
            Oracles::Rule(o) => o,
            Oracles::Remote(o) => o.as_ref(),
        }
    }

    fn merger(&self) -> &dyn MergeOracle {
        match self {
            Oracles::Rule(o) => o,
            Oracles::Remote(o) => o.as_ref(),
        }
    }
}

fn build_oracles(kind: &str) -> Result<Oracles, CliError> {
    match kind {
        "remote" => {
            let config = RemoteOracleConfig::from_env("gpt-4o-mini".to_string()).map_err(|e| {
                CliError::Oracle(format!(
                    "remote oracle needs FADEMEM_LLM_URL and FADEMEM_LLM_KEY: {e}"
                ))
            })?;
            Ok(Oracles::Remote(Box::new(RemoteOracle::new(config))))
        }
        _ => Ok(Oracles::Rule(fademem::RuleOracle)),
    }
}

/// Advisory lock around snapshot mutation; stale locks are reported, not
/// stolen.
struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    fn acquire(store_path: &Path) -> Result<StoreLock, CliError> {
        let path = store_path.with_extension("fmem.lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Config(
                format!("store is locked by another invocation ({})", path.display()),
            )),
            Err(e) => Err(CliError::Config(format!("cannot lock store: {e}"))),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn load_store(path: &Path) -> Result<MemoryStore, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "snapshot {} does not exist",
            path.display()
        )));
    }
    Ok(MemoryStore::load_snapshot(path)?)
}

// ── simulate ────────────────────────────────────────────────────────

#[derive(Serialize)]
struct SimulateOutput<'a> {
    seed: u64,
    days: u32,
    fademem: &'a MetricsReport,
    fifo_baseline: &'a FifoReport,
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.days == 0 {
        return Err(CliError::Usage("--days must be at least 1".to_string()));
    }
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(CliError::Usage("--k depths must be positive".to_string()));
    }
    let config = load_config(&args.config)?.validate()?;
    let oracles = build_oracles(&args.oracle)?;
    let embedder = HashEmbedder::default();

    let trace = match &args.replay {
        Some(path) => {
            let events = read_jsonl(path)?;
            validate_trace(&events)?;
            events
        }
        None => {
            let params = TraceParams {
                days: args.days as f64,
                ..TraceParams::default()
            };
            generate_trace(args.seed, &params)
        }
    };

    let run = run_benchmark(
        &trace,
        config,
        &embedder,
        oracles.classifier(),
        oracles.merger(),
        &args.k,
    )?;
    let fifo = run_fifo_baseline(&trace, run.report.counts.retained, &embedder)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Config(format!("cannot create output dir: {e}")))?;
    let metrics_json = serde_json::to_string_pretty(&SimulateOutput {
        seed: args.seed,
        days: args.days,
        fademem: &run.report,
        fifo_baseline: &fifo,
    })
    .expect("report serializes");
    write_text(&args.out.join("metrics.json"), &metrics_json)?;
    write_text(&args.out.join("metrics.csv"), &run.report.to_csv())?;
    let mut storage_csv = String::from("day,records,lml,sml,observed\n");
    for s in &run.storage_curve {
        storage_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.day, s.records, s.lml, s.sml, s.observed
        ));
    }
    write_text(&args.out.join("storage.csv"), &storage_csv)?;
    write_jsonl(&trace, &args.out.join("trace.jsonl"))?;
    run.store.save_snapshot(&args.out.join("snapshot.fmem"))?;

    print_summary(args.seed, args.days, &run.report, &fifo);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn print_summary(seed: u64, days: u32, report: &MetricsReport, fifo: &FifoReport) {
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "  -  ".to_string(), |x| format!("{x:.3}"));
    println!("fademem simulate  seed {seed}  {days} virtual days");
    println!("  events {:>5}   observes {:>4}   queries {:>4}   conflicts {:>3}", report.counts.events, report.counts.observes, report.counts.queries, report.counts.conflicts);
    println!("  retained {}/{} (SRR {:.3})   fused {}   pruned {}   evicted {}", report.counts.retained, report.counts.total_observed, report.srr, report.counts.fused_groups, report.counts.pruned, report.counts.evicted);
    let rp: Vec<String> = report.rp_at_k.iter().map(|(k, v)| format!("rp@{k} {v:.3}")).collect();
    println!("  retrieval: {}   tcs {:.3}", rp.join("  "), report.tcs);
    println!("  retention: critical {:.3}  contextual {:.3}", report.retention_critical, report.retention_contextual);
    println!("  conflicts:      contradiction  update  overlap");
    println!(
        "    accuracy        {}          {}   {}",
        fmt_opt(report.conflict_accuracy.contradiction),
        fmt_opt(report.conflict_accuracy.update),
        fmt_opt(report.conflict_accuracy.overlap)
    );
    println!(
        "    consistency     {}          {}   {}",
        fmt_opt(report.conflict_consistency.contradiction),
        fmt_opt(report.conflict_consistency.update),
        fmt_opt(report.conflict_consistency.overlap)
    );
    println!(
        "  fifo baseline (budget {}): retention critical {:.3}  contextual {:.3}",
        fifo.budget, fifo.retention_critical, fifo.retention_contextual
    );
}

// ── store subcommands ───────────────────────────────────────────────

fn observe(args: ObserveArgs) -> Result<(), CliError> {
    let _lock = StoreLock::acquire(&args.store.store)?;
    let mut store = if args.store.store.exists() {
        MemoryStore::load_snapshot(&args.store.store)?
    } else {
        MemoryStore::new(load_config(&args.config)?.validate()?)
    };
    let now = Timestamp::new(args.at.unwrap_or_else(|| store.clock().days()));
    let embedder = HashEmbedder::default();
    let outcome = store.observe(&args.text, now, &embedder, &fademem::RuleOracle, &fademem::RuleOracle)?;
    store.save_snapshot(&args.store.store)?;
    match outcome.resident_id {
        Some(id) if outcome.inserted => println!("observed as {id} at day {:.2}", now.days()),
        Some(id) => println!("absorbed into {id} at day {:.2}", now.days()),
        None => println!("observed and forgotten within the same pipeline run"),
    }
    if !outcome.fused.is_empty() {
        println!("fused {} cluster(s)", outcome.fused.len());
    }
    if !outcome.pruned.is_empty() {
        println!("pruned {} record(s)", outcome.pruned.len());
    }
    Ok(())
}

fn query(args: QueryArgs) -> Result<(), CliError> {
    let _lock = StoreLock::acquire(&args.store.store)?;
    let mut store = load_store(&args.store.store)?;
    let now = Timestamp::new(args.at.unwrap_or_else(|| store.clock().days()));
    let embedder = HashEmbedder::default();
    let hits = store.query(&args.text, args.k, now, &embedder)?;
    store.save_snapshot(&args.store.store)?;
    if hits.is_empty() {
        println!("no results");
        return Ok(());
    }
    for (rank, hit) in hits.iter().enumerate() {
        println!(
            "{:>2}. score {:.4}  sim {:.4}  strength {:.4}  {}  {}  {:?}",
            rank + 1,
            hit.score,
            hit.similarity,
            hit.strength,
            hit.layer,
            hit.id,
            hit.content
        );
    }
    Ok(())
}

fn tick(args: TickArgs) -> Result<(), CliError> {
    if args.days < 0.0 {
        return Err(CliError::Usage("--days must be non-negative".to_string()));
    }
    let _lock = StoreLock::acquire(&args.store.store)?;
    let mut store = load_store(&args.store.store)?;
    let now = Timestamp::new(store.clock().days() + args.days);
    let outcome = store.tick(now)?;
    store.save_snapshot(&args.store.store)?;
    println!(
        "ticked to day {:.2}: pruned {}, evicted {}, {} records remain",
        now.days(),
        outcome.pruned.len(),
        outcome.evicted.len(),
        store.len()
    );
    Ok(())
}

fn stats(args: StoreArg) -> Result<(), CliError> {
    let store = load_store(&args.store)?;
    let stats = store.stats();
    println!("clock: day {:.2}", stats.clock_days);
    println!(
        "records: {} total ({} LML, {} SML) of {} observed",
        stats.total, stats.lml, stats.sml, stats.observed_total
    );
    println!("storage reduction so far: {:.3}", stats.srr_so_far);
    println!("strength histogram (0.0..1.0 in tenths):");
    for (i, count) in stats.strength_histogram.iter().enumerate() {
        println!(
            "  [{:.1}-{:.1}) {:>5}  {}",
            i as f64 / 10.0,
            (i + 1) as f64 / 10.0,
            count,
            "#".repeat((*count).min(60))
        );
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), CliError> {
    let store = load_store(&args.store.store)?;
    let events = ops_to_trace(store.event_log());
    write_jsonl(&events, &args.out)?;
    println!("exported {} events to {}", events.len(), args.out.display());
    Ok(())
}

/// Projects the operation log onto the trace-file format. Ticks are interior
/// to the engine (replay re-derives them from event times), so only observe
/// and query operations are exported.
fn ops_to_trace(ops: &[LoggedOp]) -> Vec<TraceEvent> {
    let mut events = Vec::new();
    for op in ops {
        let (kind, text, category) = match &op.op {
            StoreOp::Observe { text, category } => {
                (EventKind::Observe, text.clone(), category.clone())
            }
            StoreOp::Query { text, .. } => (EventKind::Query, text.clone(), None),
            StoreOp::Tick => continue,
        };
        events.push(TraceEvent {
            id: events.len() as u64,
            at: op.at,
            kind,
            text,
            labels: EventLabels {
                category: category.and_then(|c| match c.as_str() {
                    "critical" => Some(Category::Critical),
                    "contextual" => Some(Category::Contextual),
                    _ => None,
                }),
                ..EventLabels::default()
            },
        });
    }
    events
}
