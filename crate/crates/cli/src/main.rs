mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cloudprobe_core::config::ConfigFile;
use cloudprobe_core::detection::{
    default_bin_edges, default_curve_grid, detect_outages, detection_report, nodetect_curve, sla_metrics, true_sla_metrics,
    write_curve_csv, DetectionBasis,
};
use cloudprobe_core::estimators::{sla_test, EstimateSet, IntervalKind, SlaClaim};
use cloudprobe_core::jsonl::{file_digest, read_attempt_log_file, read_outages_file, write_attempt_log_file, write_outages_file};
use cloudprobe_core::model::{aggregate_counts, expected_tries, Mode, Timeline};
use cloudprobe_core::prober::{run_campaign, HttpProbe, ProbeError, ProbeTarget, RunOptions};
use cloudprobe_core::simulator::{generate_timeline, sample_campaign};
use cloudprobe_core::{ConfigError, EstimateError, LogError};
use log::{info, warn};

use crate::report::{MetricsPair, Report};

#[derive(Parser)]
#[command(name = "cloudprobe", version, about = "Periodic-probe availability campaigns and their analysis")]
struct Cli {
    /// Campaign config file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; JSON goes to stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth timeline and sample it into an attempt log
    Simulate,
    /// Availability estimates and SLA claim tests for an attempt log
    Estimate(EstimateArgs),
    /// Compare detected outages against ground truth
    Detect(DetectArgs),
    /// Run a live HTTP campaign
    Probe(ProbeArgs),
    /// Merge report fragments computed from the same log
    Report(ReportArgs),
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    log: PathBuf,
    /// Claimed availability to test, optionally with its own level: 0.999 or 0.999@0.01
    #[arg(long = "claim")]
    claims: Vec<String>,
    /// Significance level for claims and the confidence interval
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = IntervalArg::Wald)]
    interval: IntervalArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntervalArg {
    Wald,
    ClopperPearson,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Long-outage threshold in seconds; defaults to the probe interval
    #[arg(long)]
    threshold_s: Option<f64>,
    /// Count a slot as failed when its first attempt fails, ignoring retries
    #[arg(long)]
    first_attempt: bool,
    /// Points on the non-detection curve
    #[arg(long, default_value_t = 150)]
    curve_points: usize,
}

#[derive(Args)]
struct ProbeArgs {
    /// Continue a campaign from its checkpoint
    #[arg(long)]
    resume: bool,
    /// Target URL; overrides the config
    #[arg(long)]
    url: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// HTTP status counted as success (repeatable)
    #[arg(long = "success-status")]
    success_statuses: Vec<u16>,
    /// Hex SHA-256 the response body must match
    #[arg(long)]
    expected_sha256: Option<String>,
    /// Stop after this many slots (the campaign stays resumable)
    #[arg(long)]
    max_slots: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    fragments: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLOUDPROBE_LOG_LEVEL", "warn")).format_timestamp(None).init();

    let result = match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Estimate(args) => estimate(&cli, args),
        Command::Detect(args) => detect(&cli, args),
        Command::Probe(args) => probe(&cli, args),
        Command::Report(args) => merge_reports(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<Option<ConfigFile>, Failure> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = ConfigFile::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.campaign.seed = seed;
    }
    Ok(Some(cfg))
}

fn require_config(cli: &Cli) -> Result<ConfigFile, Failure> {
    load_config(cli)?.ok_or_else(|| Failure::Usage("--config is required for this command".into()))
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn digest(path: &Path) -> Result<String, Failure> {
    file_digest(path).map_err(io_err(path))
}

/// Writes a report to `<out>/<name>` when `--out` is set, else to stdout.
fn emit(cli: &Cli, name: &str, text: &str) -> CmdResult {
    match &cli.out {
        Some(_) => {
            let path = out_dir(cli)?.join(name);
            fs::write(&path, text).map_err(io_err(&path))
        }
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Failure::Io(e.to_string())),
    }
}

fn simulate(cli: &Cli) -> CmdResult {
    let cfg = require_config(cli)?;
    if cfg.campaign.mode != Mode::Simulate {
        return Err(Failure::Usage("simulate requires mode = \"simulate\"".into()));
    }
    let process = cfg.require_process()?;
    let campaign = &cfg.campaign;
    let truth = generate_timeline(process, campaign.horizon_s(), campaign.seed)?;
    let log = sample_campaign(&truth, campaign, process.network_fail_prob)?;
    let counts = aggregate_counts(&log, campaign.retry_max)?;

    let dir = out_dir(cli)?;
    write_attempt_log_file(&log, &dir.join("attempts.jsonl"))?;
    write_outages_file(truth.events(), &dir.join("truth.jsonl"))?;
    info!("wrote {} attempts and {} outages to {}", log.len(), truth.events().len(), dir.display());
    println!("expected_tries={}", expected_tries(campaign)?);
    println!("y1={}", counts.y1());
    println!("x1={}", counts.x1());
    Ok(())
}

fn parse_claim(text: &str, default_alpha: f64) -> Result<SlaClaim, Failure> {
    let (p, alpha) = match text.split_once('@') {
        Some((p, a)) => (p, a.parse().map_err(|_| Failure::Usage(format!("bad significance level in claim {text:?}")))?),
        None => (text, default_alpha),
    };
    let p: f64 = p.parse().map_err(|_| Failure::Usage(format!("bad claim {text:?}")))?;
    SlaClaim::new(p, alpha).map_err(|e| Failure::Usage(format!("claim {text:?}: {e}")))
}

fn estimate(cli: &Cli, args: &EstimateArgs) -> CmdResult {
    let cfg = load_config(cli)?;
    let claims = args.claims.iter().map(|c| parse_claim(c, args.alpha)).collect::<Result<Vec<_>, _>>()?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let log = read_attempt_log_file(&args.log)?;
    let retry_max = cfg.as_ref().map_or_else(|| log.max_attempt(), |c| c.campaign.retry_max);
    let counts = aggregate_counts(&log, retry_max)?;

    let mut inputs = BTreeMap::from([("log".to_owned(), digest(&args.log)?)]);
    if let Some(path) = &cli.config {
        inputs.insert("config".into(), digest(path)?);
    }
    let mut report = Report::new(inputs["log"].clone(), inputs, cfg.as_ref());
    let kind = match args.interval {
        IntervalArg::Wald => IntervalKind::Wald,
        IntervalArg::ClopperPearson => IntervalKind::ClopperPearson,
    };
    match EstimateSet::from_counts(&counts, args.alpha, kind) {
        Ok(set) => {
            report.estimate_set = Some(set);
            let tests = claims.iter().map(|c| sla_test(&counts, c)).collect::<Result<Vec<_>, _>>().map_err(|e| Failure::Data(e.to_string()))?;
            report.sla_tests = (!tests.is_empty()).then_some(tests);
        }
        Err(EstimateError::InsufficientData(why)) => {
            warn!("insufficient data: {why}");
            report.insufficient_data = Some(why.to_owned());
        }
        Err(e) => return Err(Failure::Usage(e.to_string())),
    }
    report.counts = Some(counts);
    emit(cli, "estimate.json", &report.to_json())
}

fn detect(cli: &Cli, args: &DetectArgs) -> CmdResult {
    let cfg = require_config(cli)?;
    let campaign = &cfg.campaign;
    let threshold_s = args.threshold_s.unwrap_or(campaign.probe_interval_s);
    if !(threshold_s >= 0.0) {
        return Err(Failure::Usage(format!("--threshold-s must be >= 0, got {threshold_s}")));
    }
    let log = read_attempt_log_file(&args.log)?;
    log.validate(Some(campaign.retry_max))?;
    let events = read_outages_file(&args.truth)?;
    let truth = Timeline::new(campaign.horizon_s(), events).map_err(|e| Failure::Data(format!("truth does not match the config horizon: {e}")))?;

    let basis = if args.first_attempt { DetectionBasis::FirstAttempt } else { DetectionBasis::FinalAttempt };
    let detection = detection_report(&truth, &log, campaign, &default_bin_edges(campaign.probe_interval_s), basis)?;
    let runs = match log.split_by_vantage().into_iter().next() {
        Some((_, stream)) => detect_outages(&stream, campaign, basis)?,
        None => Vec::new(),
    };
    let curve = nodetect_curve(campaign.probe_interval_s, &default_curve_grid(campaign.probe_interval_s, args.curve_points.max(1)))
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let inputs = BTreeMap::from([
        ("log".to_owned(), digest(&args.log)?),
        ("truth".to_owned(), digest(&args.truth)?),
        ("config".to_owned(), digest(cli.config.as_deref().expect("config checked"))?),
    ]);
    let mut report = Report::new(inputs["log"].clone(), inputs, Some(&cfg));
    report.detection = Some(detection);
    report.sla_metrics = Some(MetricsPair { detected: sla_metrics(&runs, threshold_s), truth: true_sla_metrics(&truth, threshold_s) });

    let mut csv = Vec::new();
    write_curve_csv(&curve, &mut csv).map_err(|e| Failure::Io(e.to_string()))?;
    if cli.out.is_some() {
        let dir = out_dir(cli)?;
        let path = dir.join("nodetect_curve.csv");
        fs::write(&path, &csv).map_err(io_err(&path))?;
        return emit(cli, "detect.json", &report.to_json());
    }
    match cli.format {
        Format::Json => emit(cli, "detect.json", &report.to_json()),
        Format::Csv => std::io::stdout().write_all(&csv).map_err(|e| Failure::Io(e.to_string())),
    }
}

fn probe(cli: &Cli, args: &ProbeArgs) -> CmdResult {
    let mut cfg = require_config(cli)?;
    if let Some(url) = &args.url {
        cfg.campaign.target = Some(url.clone());
    }
    if cfg.campaign.mode != Mode::Live {
        return Err(Failure::Usage("probe requires mode = \"live\"".into()));
    }
    cfg.campaign.validate()?;
    let mut settings = cfg.probe.clone().unwrap_or_default();
    if let Some(t) = args.timeout_ms {
        settings.timeout_ms = t;
    }
    if !args.success_statuses.is_empty() {
        settings.success_statuses = args.success_statuses.clone();
    }
    if let Some(h) = &args.expected_sha256 {
        settings.expected_sha256 = Some(h.clone());
    }
    let target = ProbeTarget::new(cfg.campaign.target.as_deref().expect("validated live config"), &settings)?;
    let adapter = HttpProbe::new(target)?;

    let dir = out_dir(cli)?;
    let options = RunOptions { resume: args.resume, max_slots: args.max_slots };
    let summary = run_campaign(&adapter, &cfg.campaign, &dir.join("attempts.jsonl"), &dir.join("checkpoint"), &options).map_err(|e| match e {
        ProbeError::Config(e) => Failure::Usage(e.to_string()),
        ProbeError::Checkpoint { .. } | ProbeError::Log(_) => Failure::Data(e.to_string()),
        ProbeError::LogWrite { .. } | ProbeError::Setup(_) => Failure::Io(e.to_string()),
    })?;
    println!("slots_run={}", summary.slots_run);
    println!("last_completed_slot={}", summary.last_completed_slot.map_or_else(|| "none".to_owned(), |s| s.to_string()));
    println!("finished={}", summary.finished);
    Ok(())
}

fn merge_reports(cli: &Cli, args: &ReportArgs) -> CmdResult {
    let mut fragments = Vec::with_capacity(args.fragments.len());
    for path in &args.fragments {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let frag: Report = serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        fragments.push(frag);
    }
    let merged = report::merge(fragments).map_err(|e| Failure::Data(e.to_string()))?;
    emit(cli, "report.json", &merged.to_json())
}
