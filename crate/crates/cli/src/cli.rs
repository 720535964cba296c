//! Command-line front end. Flags override the matching keys of the config
//! file; anything not given keeps the config (or built-in) value.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gsi_core::analytics::{
    fit_experience_curve, kruskal_wallis, kruskal_wallis_exact, pairwise_tests, summarize, LeAnchor,
};
use gsi_core::log::LOG_SCHEMA_VERSION;
use gsi_core::sequencer::SUITE_SCHEMA_VERSION;
use gsi_core::simulator::{run_experiment, subject_models};
use gsi_core::{replay, GsiKind, SessionLog, SinkTarget, SuiteFile, WorkbenchConfig};
use serde::Serialize;

use crate::service::{Service, ServiceContext};

#[derive(Debug, Parser)]
#[command(
    name = "gsi",
    version,
    about = "Grasp-type switching interface workbench"
)]
pub struct Cli {
    /// Workbench config file (JSON); missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a balanced suite of sequence sets.
    GenSuite(GenSuiteArgs),
    /// Run the WebSocket session service.
    Serve(ServeArgs),
    /// Simulate every subject, interface and set of a suite.
    Simulate(SimulateArgs),
    /// Summarize session logs.
    Analyze(AnalyzeArgs),
    /// Fit an experience curve to (set, time) points.
    FitLe(FitLeArgs),
    /// Kruskal-Wallis and pairwise tests on grouped values.
    Stats(StatsArgs),
    /// Re-derive a log's selections and trials and compare them.
    Replay(ReplayArgs),
    /// Check suite and log files.
    Validate(ValidateArgs),
    /// Print the effective config.
    Config,
}

#[derive(Debug, Args)]
pub struct GenSuiteArgs {
    /// suite.seed
    #[arg(long)]
    pub seed: u64,
    /// suite.n_sets
    #[arg(long)]
    pub sets: Option<u32>,
    /// suite.balance_tolerance
    #[arg(long)]
    pub balance_tolerance: Option<f64>,
    /// suite.max_attempts
    #[arg(long)]
    pub max_attempts: Option<u64>,
    /// Output file; standard output if absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SessionFlags {
    /// session.backend.dwell.threshold_ms
    #[arg(long)]
    pub dwell_threshold_ms: Option<u64>,
    /// session.backend.dwell.gap_tolerance_ms
    #[arg(long)]
    pub gap_tolerance_ms: Option<u64>,
    /// session.feedback
    #[arg(long)]
    pub feedback: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// serve.bind
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    /// serve.log_dir
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Suite file; generated from the suite config if absent.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// sink.target: `stdout`, `none`, `file:PATH` or `tcp:HOST:PORT`.
    #[arg(long, value_parser = parse_sink)]
    pub sink: Option<SinkTarget>,
    /// sink.buffer_bound
    #[arg(long)]
    pub sink_bound: Option<usize>,
    #[command(flatten)]
    pub session: SessionFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// simulation.seed
    #[arg(long)]
    pub seed: u64,
    /// Suite file; generated from the suite config if absent.
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// simulation.n_subjects
    #[arg(long)]
    pub subjects: Option<u32>,
    /// simulation.gsis: `all` or a comma list of i-gsi, pr, fsm, app.
    #[arg(long, value_parser = parse_gsis)]
    pub gsis: Option<GsiList>,
    /// simulation.feedback
    #[arg(long)]
    pub feedback: Option<bool>,
    /// simulation.subject_spread
    #[arg(long)]
    pub subject_spread: Option<f64>,
    /// user_model.practice_b
    #[arg(long)]
    pub practice_b: Option<f64>,
    /// Directory for the session logs.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Log files or directories of `.jsonl` logs.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// analysis.le_anchor
    #[arg(long, value_enum)]
    pub le_anchor: Option<AnchorArg>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the CSV tables to this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitLeArgs {
    /// CSV of `x,y` rows (header optional).
    pub points: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// CSV of `group,value` rows (header optional), or a JSON object of arrays.
    pub input: PathBuf,
    /// Exact permutation p-value (small samples only).
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
    /// Print the recomputed trial records.
    #[arg(long)]
    pub trials: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnchorArg {
    Mean,
    Median,
}

#[derive(Debug, Clone)]
pub struct GsiList(pub Vec<GsiKind>);

fn parse_gsis(s: &str) -> std::result::Result<GsiList, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(GsiList(GsiKind::ALL.to_vec()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<GsiKind>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(GsiList)
}

fn parse_sink(s: &str) -> std::result::Result<SinkTarget, String> {
    match s {
        "stdout" => Ok(SinkTarget::Stdout),
        "none" => Ok(SinkTarget::None),
        _ => {
            if let Some(path) = s.strip_prefix("file:") {
                Ok(SinkTarget::File { path: path.into() })
            } else if let Some(addr) = s.strip_prefix("tcp:") {
                Ok(SinkTarget::Tcp { addr: addr.into() })
            } else {
                Err(format!("unknown sink `{s}`"))
            }
        }
    }
}

impl SessionFlags {
    fn apply(&self, config: &mut WorkbenchConfig) {
        let s = &mut config.session;
        if let Some(v) = self.dwell_threshold_ms {
            s.backend.dwell.threshold_ms = v;
        }
        if let Some(v) = self.gap_tolerance_ms {
            s.backend.dwell.gap_tolerance_ms = v;
        }
        if let Some(v) = self.feedback {
            s.feedback = v;
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let config = match &cli.config {
        Some(path) => WorkbenchConfig::load(path)?,
        None => WorkbenchConfig::default(),
    };
    match cli.command {
        Command::GenSuite(a) => gen_suite(config, a),
        Command::Serve(a) => serve(config, a),
        Command::Simulate(a) => simulate(config, a),
        Command::Analyze(a) => analyze(config, a),
        Command::FitLe(a) => fit_le(a),
        Command::Stats(a) => stats(a),
        Command::Replay(a) => replay_log(a),
        Command::Validate(a) => validate(a),
        Command::Config => {
            println!("{}", config.to_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn load_suite(config: &WorkbenchConfig, path: Option<&Path>) -> Result<SuiteFile> {
    let suite = match path {
        Some(p) => SuiteFile::load(p).with_context(|| format!("loading suite {}", p.display()))?,
        None => SuiteFile::build(&config.suite, &config.catalog)?,
    };
    if let Err(problems) = suite.validate() {
        bail!("suite is invalid:\n  {}", problems.join("\n  "));
    }
    Ok(suite)
}

fn gen_suite(mut config: WorkbenchConfig, a: GenSuiteArgs) -> Result<ExitCode> {
    config.suite.seed = a.seed;
    if let Some(v) = a.sets {
        config.suite.n_sets = v;
    }
    if let Some(v) = a.balance_tolerance {
        config.suite.balance_tolerance = v;
    }
    if let Some(v) = a.max_attempts {
        config.suite.max_attempts = v;
    }
    config.validate()?;
    let suite = SuiteFile::build(&config.suite, &config.catalog)?;
    ::log::info!(
        "suite seed {} built after {} attempts, max NCC deviation {:.3}",
        a.seed,
        suite.attempts,
        suite.balance.max_relative_deviation
    );
    write_output(a.out.as_deref(), &suite.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn serve(mut config: WorkbenchConfig, a: ServeArgs) -> Result<ExitCode> {
    a.session.apply(&mut config);
    if let Some(v) = a.bind {
        config.serve.bind = v;
    }
    if let Some(v) = a.log_dir {
        config.serve.log_dir = v;
    }
    if let Some(v) = a.sink {
        config.sink.target = v;
    }
    if let Some(v) = a.sink_bound {
        config.sink.buffer_bound = v;
    }
    config.validate()?;
    let suite = load_suite(&config, a.suite.as_deref())?;
    let ctx = ServiceContext::new(
        config.session.clone(),
        suite,
        config.serve.log_dir.clone(),
        config.sink.open()?,
        config.sink.buffer_bound,
    )?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let service = Service::bind(config.serve.bind, ctx).await?;
        eprintln!("listening on ws://{}", service.local_addr()?);
        service.run().await
    })?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(mut config: WorkbenchConfig, a: SimulateArgs) -> Result<ExitCode> {
    let sim = &mut config.simulation;
    sim.seed = a.seed;
    if let Some(v) = a.subjects {
        sim.n_subjects = v;
    }
    if let Some(v) = a.gsis {
        sim.gsis = v.0;
    }
    if let Some(v) = a.feedback {
        sim.feedback = v;
    }
    if let Some(v) = a.subject_spread {
        sim.subject_spread = v;
    }
    if let Some(v) = a.practice_b {
        config.user_model.practice_b = Some(v);
    }
    config.validate()?;
    let suite = load_suite(&config, a.suite.as_deref())?;
    let models = subject_models(&config.simulation, &config.user_model);
    let logs = run_experiment(&config.simulation, &suite, &models)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for log in &logs {
        let h = &log.header;
        let name = format!(
            "{}_{}_set{:02}.jsonl",
            h.subject_id, h.gsi_kind, h.set.set_index
        );
        log.save(&a.out.join(name))?;
    }
    let trials: usize = logs
        .iter()
        .map(|l| l.trials().filter(|t| t.scored).count())
        .sum();
    eprintln!(
        "wrote {} session logs ({trials} scored trials) to {}",
        logs.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn collect_logs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no session logs found");
    }
    Ok(files)
}

fn analyze(mut config: WorkbenchConfig, a: AnalyzeArgs) -> Result<ExitCode> {
    if let Some(anchor) = a.le_anchor {
        config.analysis.le_anchor = match anchor {
            AnchorArg::Mean => LeAnchor::Mean,
            AnchorArg::Median => LeAnchor::Median,
        };
    }
    let logs = collect_logs(&a.inputs)?
        .iter()
        .map(|p| SessionLog::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let report = summarize(&logs, &config.analysis)?;
    write_output(a.out.as_deref(), &report.to_json())?;
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, table) in report.csv_tables()? {
            let path = dir.join(format!("{name}.csv"));
            std::fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Rows of a headerless-or-headed CSV; a first row that does not parse as
/// data is taken as the header.
fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(rows)
}

fn fit_le(a: FitLeArgs) -> Result<ExitCode> {
    let mut points = Vec::new();
    for (i, row) in read_rows(&a.points)?.iter().enumerate() {
        let parsed = (
            row.get(0).map(str::parse::<f64>),
            row.get(1).map(str::parse::<f64>),
        );
        match parsed {
            (Some(Ok(x)), Some(Ok(y))) => points.push((x, y)),
            _ if i == 0 => {}
            _ => bail!("{}: row {} is not an x,y pair", a.points.display(), i + 1),
        }
    }
    let fit = fit_experience_curve(&points)?;
    print!("{}", json(&fit));
    Ok(ExitCode::SUCCESS)
}

fn read_groups(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    if path.extension().is_some_and(|x| x == "json") {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(serde_json::from_str(&text)?);
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, row) in read_rows(path)?.iter().enumerate() {
        match (row.get(0), row.get(1).map(str::parse::<f64>)) {
            (Some(g), Some(Ok(v))) => groups.entry(g.to_string()).or_default().push(v),
            _ if i == 0 => {}
            _ => bail!(
                "{}: row {} is not a group,value pair",
                path.display(),
                i + 1
            ),
        }
    }
    Ok(groups)
}

#[derive(Serialize)]
struct StatsReport {
    groups: BTreeMap<String, usize>,
    kruskal_wallis: gsi_core::analytics::KwResult,
    pairwise: gsi_core::analytics::PairwiseMatrix,
}

fn stats(a: StatsArgs) -> Result<ExitCode> {
    let groups = read_groups(&a.input)?;
    let values: Vec<&[f64]> = groups.values().map(Vec::as_slice).collect();
    let kw = if a.exact {
        kruskal_wallis_exact(&values)?
    } else {
        kruskal_wallis(&values)?
    };
    let named: Vec<(String, &[f64])> = groups
        .iter()
        .map(|(k, v)| (k.clone(), v.as_slice()))
        .collect();
    let report = StatsReport {
        groups: groups.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        kruskal_wallis: kw,
        pairwise: pairwise_tests(&named)?,
    };
    print!("{}", json(&report));
    Ok(ExitCode::SUCCESS)
}

fn replay_log(a: ReplayArgs) -> Result<ExitCode> {
    let text =
        std::fs::read_to_string(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let (log, integrity) = SessionLog::parse_jsonl(&text)?;
    let mut ok = true;
    if !integrity.is_intact() {
        ok = false;
        eprintln!(
            "{}: integrity check failed: trailer records {} events with digest {}, file has {} events with digest {}",
            a.log.display(),
            integrity.recorded_events,
            integrity.recorded_digest,
            integrity.actual_events,
            integrity.computed_digest
        );
    }
    let outcome = replay(&log)?;
    if let Some(d) = &outcome.divergence {
        ok = false;
        eprintln!("{}: replay diverged at {d}", a.log.display());
    }
    if ok && log.to_jsonl() != text {
        ok = false;
        eprintln!(
            "{}: log does not re-serialize byte-identically",
            a.log.display()
        );
    }
    if a.trials {
        print!("{}", json(&outcome.trials));
    }
    if ok {
        eprintln!(
            "{}: {} trials replayed identically",
            a.log.display(),
            outcome.trials.len()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let mut failures = 0;
    for path in &a.files {
        match validate_file(path) {
            Ok(kind) => println!("ok {}: {kind}", path.display()),
            Err(e) => {
                failures += 1;
                eprintln!("invalid {}: {e:#}", path.display());
            }
        }
    }
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn validate_file(path: &Path) -> Result<&'static str> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().unwrap_or_default();
    if first.contains(LOG_SCHEMA_VERSION) {
        let (log, integrity) = SessionLog::parse_jsonl(&text)?;
        integrity.check()?;
        log.header.config.validate()?;
        return Ok("session log");
    }
    if text.contains(SUITE_SCHEMA_VERSION) {
        let suite = SuiteFile::from_json(&text)?;
        if let Err(problems) = suite.validate() {
            bail!("{}", problems.join("; "));
        }
        return Ok("suite");
    }
    bail!("neither a {SUITE_SCHEMA_VERSION} suite nor a {LOG_SCHEMA_VERSION} log")
}
