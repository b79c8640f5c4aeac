//! Subcommand plumbing: file loading, stage orchestration, and output
//! writing. Stages communicate through files only, so each can be re-run and
//! tested on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use spoofscope_core::aggregate;
use spoofscope_core::detect_covert::CovertConfig;
use spoofscope_core::identity;
use spoofscope_core::ingest::{self, fetch};
use spoofscope_core::mechanism;
use spoofscope_core::model::{
    build_windows, Classification, HourlyWindow, Letter, Observation, Schedule, VantagePoint,
    Verdict, VpId,
};
use spoofscope_core::pipeline::{self, PipelineConfig};
use spoofscope_core::simulate::{self, ScenarioConfig};
use spoofscope_core::validate;

use crate::manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Parse(anyhow::Error),
    Internal(anyhow::Error),
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration: {e:#}"),
            CliError::Parse(e) => write!(f, "input parsing: {e:#}"),
            CliError::Internal(e) => write!(f, "internal: {e:#}"),
        }
    }
}

type CliResult = Result<(), CliError>;

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn parse_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Parse(e.into())
}

fn internal_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Internal(e.into())
}

/// Batch detection and analysis of DNS spoofing in anycast measurement data.
#[derive(Debug, Parser)]
#[command(name = "spoofscope", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize raw measurement exports into canonical record files, or
    /// fetch them from a measurement archive.
    Ingest(IngestArgs),
    /// Classify hourly windows and infer spoofing mechanisms.
    Detect(DetectArgs),
    /// Match verdicts against an authoritative server log.
    Validate(ValidateArgs),
    /// Aggregate verdicts into trend, geography, and latency reports.
    Report(ReportArgs),
    /// Generate a labeled synthetic dataset from a scenario config.
    Simulate(SimulateArgs),
    /// Score verdicts against simulator ground truth.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    dns: Option<PathBuf>,
    #[arg(long)]
    ping: Option<PathBuf>,
    #[arg(long)]
    traceroute: Option<PathBuf>,
    #[arg(long)]
    vps: Option<PathBuf>,
    /// Measurement-archive base URL; enables fetch mode.
    #[arg(long)]
    fetch_url: Option<String>,
    #[arg(long, requires = "fetch_url")]
    measurement_id: Option<u64>,
    #[arg(long, requires = "fetch_url", allow_hyphen_values = true)]
    start: Option<i64>,
    #[arg(long, requires = "fetch_url", allow_hyphen_values = true)]
    stop: Option<i64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    dns: PathBuf,
    #[arg(long)]
    ping: PathBuf,
    #[arg(long)]
    traceroute: PathBuf,
    #[arg(long)]
    known_sites: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    /// File with one sampled hour start (unix seconds) per line.
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads for per-window classification (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Relative-gap threshold of the covert-delay rule.
    #[arg(long, default_value_t = 0.2)]
    covert_ratio: f64,
    /// Spread multiplier of the covert-delay rule.
    #[arg(long, default_value_t = 3.0)]
    covert_mad_factor: f64,
    /// Absolute floor (ms) of the covert-delay rule.
    #[arg(long, default_value_t = 10.0)]
    covert_floor_ms: f64,
    /// Minimum DNS and ping samples per window for latency judgments.
    #[arg(long, default_value_t = 5)]
    min_samples: usize,
}

impl ThresholdArgs {
    fn covert(&self) -> Result<CovertConfig, CliError> {
        if self.covert_ratio <= 0.0
            || self.covert_mad_factor <= 0.0
            || self.covert_floor_ms <= 0.0
            || self.min_samples == 0
        {
            return Err(config_err(anyhow::anyhow!("thresholds must be positive")));
        }
        Ok(CovertConfig {
            ratio: self.covert_ratio,
            mad_factor: self.covert_mad_factor,
            floor_ms: self.covert_floor_ms,
            min_samples: self.min_samples,
        })
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    dns: PathBuf,
    #[arg(long)]
    ping: PathBuf,
    #[arg(long)]
    traceroute: PathBuf,
    #[arg(long)]
    vps: PathBuf,
    #[arg(long)]
    server_log: PathBuf,
    /// Letter the server log covers.
    #[arg(long, default_value = "B")]
    letter: String,
    /// Match window in seconds around each query.
    #[arg(long, default_value_t = validate::DEFAULT_TOLERANCE_S)]
    tolerance_s: i64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Verdict files; epochs are grouped by window start across all of them.
    #[arg(long, required = true, num_args = 1..)]
    verdicts: Vec<PathBuf>,
    #[arg(long)]
    vps: Option<PathBuf>,
    #[arg(long)]
    known_sites: Option<PathBuf>,
    /// Fixed-cohort size for the cohort trend.
    #[arg(long, default_value_t = 3000)]
    cohort_size: usize,
    #[arg(long, default_value_t = 10)]
    min_country_vps: u32,
    /// Public-suffix rule file; enables spoofing-party clustering.
    #[arg(long)]
    psl: Option<PathBuf>,
    #[arg(long, requires = "psl")]
    rdns_map: Option<PathBuf>,
    #[arg(long, requires = "psl")]
    company_map: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Report(args) => cmd_report(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Score(args) => cmd_score(args),
    }
}

// ---------------------------------------------------------------------------
// shared file helpers

fn open_input(path: &Path) -> Result<fs::File, CliError> {
    fs::File::open(path)
        .map_err(|e| config_err(anyhow::anyhow!("cannot open {}: {e}", path.display())))
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| config_err(anyhow::anyhow!("cannot create {}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents)
        .map_err(|e| internal_err(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> CliResult {
    let mut out = fs::File::create(path)
        .map_err(|e| internal_err(anyhow::anyhow!("cannot create {}: {e}", path.display())))?;
    let mut buf = std::io::BufWriter::new(&mut out);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| internal_err(anyhow::anyhow!(e)))?;
        buf.write_all(line.as_bytes())
            .and_then(|()| buf.write_all(b"\n"))
            .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    }
    Ok(())
}

fn load_ndjson<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, usize), CliError> {
    let file = open_input(path)?;
    let (records, report) = ingest::parse_record_stream(file, |_: &T| Ok(()))
        .map_err(|e| parse_err(anyhow::anyhow!("{}: {e}", path.display())))?;
    if records.is_empty() && report.skipped > 0 {
        return Err(parse_err(anyhow::anyhow!(
            "{}: no valid records ({} skipped)",
            path.display(),
            report.skipped
        )));
    }
    Ok((records, report.skipped))
}

struct ObservationFiles {
    observations: Vec<Observation>,
    dns_report: ingest::SkipReport,
    ping_report: ingest::SkipReport,
    traceroute_report: ingest::SkipReport,
}

fn load_observations(
    dns: &Path,
    ping: &Path,
    traceroute: &Path,
) -> Result<ObservationFiles, CliError> {
    let (dns_obs, dns_report) = ingest::parse_dns_results(open_input(dns)?)
        .map_err(|e| parse_err(anyhow::anyhow!("{}: {e}", dns.display())))?;
    let (ping_obs, ping_report) = ingest::parse_ping_results(open_input(ping)?)
        .map_err(|e| parse_err(anyhow::anyhow!("{}: {e}", ping.display())))?;
    let (tr_obs, traceroute_report) = ingest::parse_traceroute_results(open_input(traceroute)?)
        .map_err(|e| parse_err(anyhow::anyhow!("{}: {e}", traceroute.display())))?;

    let mut observations: Vec<Observation> =
        Vec::with_capacity(dns_obs.len() + ping_obs.len() + tr_obs.len());
    observations.extend(dns_obs.into_iter().map(Observation::Dns));
    observations.extend(ping_obs.into_iter().map(Observation::Ping));
    observations.extend(tr_obs.into_iter().map(Observation::Traceroute));
    Ok(ObservationFiles {
        observations,
        dns_report,
        ping_report,
        traceroute_report,
    })
}

fn load_vp_index(path: &Path) -> Result<(BTreeMap<VpId, VantagePoint>, usize), CliError> {
    let (vps, skipped): (Vec<VantagePoint>, usize) = load_ndjson(path)?;
    let (index, duplicates) = ingest::index_vantage_points(vps);
    if duplicates > 0 {
        eprintln!("warning: {}: {duplicates} duplicate vp_id records dropped", path.display());
    }
    Ok((index, skipped))
}

fn load_schedule(path: &Path) -> Result<Schedule, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(anyhow::anyhow!("cannot open {}: {e}", path.display())))?;
    let mut starts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ts: i64 = line.parse().map_err(|_| {
            parse_err(anyhow::anyhow!(
                "{}:{}: bad timestamp {line:?}",
                path.display(),
                i + 1
            ))
        })?;
        starts.push(ts);
    }
    Schedule::new(starts).map_err(|e| parse_err(anyhow::anyhow!("{}: {e}", path.display())))
}

fn parse_letter(s: &str) -> Result<Letter, CliError> {
    s.parse()
        .map_err(|e| config_err(anyhow::anyhow!("bad letter {s:?}: {e}")))
}

// ---------------------------------------------------------------------------
// ingest

fn cmd_ingest(args: IngestArgs) -> CliResult {
    ensure_out_dir(&args.out_dir)?;
    let mut manifest = RunManifest::new("ingest");
    let mut did_anything = false;

    if let Some(url) = &args.fetch_url {
        let (id, start, stop) = match (args.measurement_id, args.start, args.stop) {
            (Some(id), Some(start), Some(stop)) => (id, start, stop),
            _ => {
                return Err(config_err(anyhow::anyhow!(
                    "fetch mode needs --measurement-id, --start, and --stop"
                )))
            }
        };
        let config = fetch::FetchConfig::new(url.clone());
        let bytes = fetch::fetch_measurements(&config, id, start, stop)
            .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
        let out = args.out_dir.join("fetched.ndjson");
        fs::write(&out, &bytes).map_err(|e| internal_err(anyhow::anyhow!(e)))?;
        let lines = bytes.iter().filter(|&&b| b == b'\n').count();
        manifest.count("fetched_records", lines as u64);
        did_anything = true;
    }

    let mut skip_reports = BTreeMap::new();
    if let Some(path) = &args.dns {
        let (obs, report) = ingest::parse_dns_results(open_input(path)?)
            .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
        write_records(&args.out_dir.join("dns.ndjson"), &obs)?;
        manifest.input(path, report.parsed, report.skipped);
        skip_reports.insert("dns", report);
        did_anything = true;
    }
    if let Some(path) = &args.ping {
        let (obs, report) = ingest::parse_ping_results(open_input(path)?)
            .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
        write_records(&args.out_dir.join("ping.ndjson"), &obs)?;
        manifest.input(path, report.parsed, report.skipped);
        skip_reports.insert("ping", report);
        did_anything = true;
    }
    if let Some(path) = &args.traceroute {
        let (obs, report) = ingest::parse_traceroute_results(open_input(path)?)
            .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
        write_records(&args.out_dir.join("traceroute.ndjson"), &obs)?;
        manifest.input(path, report.parsed, report.skipped);
        skip_reports.insert("traceroute", report);
        did_anything = true;
    }
    if let Some(path) = &args.vps {
        let (vps, report) = ingest::parse_vantage_points(open_input(path)?)
            .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
        write_records(&args.out_dir.join("vps.ndjson"), &vps)?;
        manifest.input(path, report.parsed, report.skipped);
        skip_reports.insert("vps", report);
        did_anything = true;
    }

    if !did_anything {
        return Err(config_err(anyhow::anyhow!(
            "nothing to do: pass --dns/--ping/--traceroute/--vps or --fetch-url"
        )));
    }
    let skips = serde_json::to_string_pretty(&skip_reports).expect("serializes");
    write_output(&args.out_dir.join("skip_report.json"), &skips)?;
    manifest
        .write(&args.out_dir)
        .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// detect

fn cmd_detect(args: DetectArgs) -> CliResult {
    ensure_out_dir(&args.out_dir)?;
    let covert = args.thresholds.covert()?;
    let config = PipelineConfig {
        covert,
        ..PipelineConfig::default()
    };

    let sites =
        ingest::load_known_sites(&args.known_sites).map_err(|e| parse_err(anyhow::anyhow!(e)))?;
    let profile =
        ingest::load_pattern_profile(&args.profile).map_err(|e| parse_err(anyhow::anyhow!(e)))?;
    let schedule = load_schedule(&args.schedule)?;
    let loaded = load_observations(&args.dns, &args.ping, &args.traceroute)?;

    // traceroute records whose reached flag contradicts the known service
    // address are dropped (conservative), and counted
    let mut inconsistent_reached = 0u64;
    let observations: Vec<Observation> = loaded
        .observations
        .into_iter()
        .filter(|obs| match obs {
            Observation::Traceroute(tr) => {
                let ok = tr.check_reached(sites.service_address(tr.letter)).is_ok();
                if !ok {
                    inconsistent_reached += 1;
                }
                ok
            }
            _ => true,
        })
        .collect();
    let n_observations = observations.len();

    let windows = build_windows(observations, &schedule);
    let run = |w: &[HourlyWindow]| pipeline::detect_windows(w, &profile, &sites, &config);
    let outcome = match args.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| config_err(anyhow::anyhow!(e)))?;
            pool.install(|| run(&windows))
        }
        None => run(&windows),
    };

    for v in &outcome.verdicts {
        v.check().map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    }
    write_records(&args.out_dir.join("verdicts.ndjson"), &outcome.verdicts)?;

    let mut manifest = RunManifest::new("detect");
    manifest.thresholds = Some(serde_json::to_value(config).expect("serializes"));
    manifest.input(
        &args.dns,
        loaded.dns_report.parsed,
        loaded.dns_report.skipped,
    );
    manifest.input(
        &args.ping,
        loaded.ping_report.parsed,
        loaded.ping_report.skipped,
    );
    manifest.input(
        &args.traceroute,
        loaded.traceroute_report.parsed,
        loaded.traceroute_report.skipped,
    );
    manifest.count("observations_in_schedule", n_observations as u64);
    manifest.count("windows", windows.len() as u64);
    manifest.count("verdicts", outcome.verdicts.len() as u64);
    manifest.count("traceroutes_inconsistent_reached", inconsistent_reached);
    for class in [
        Classification::Valid,
        Classification::OvertSpoofed,
        Classification::CovertDelayed,
        Classification::Timeout,
        Classification::Insufficient,
    ] {
        let n = outcome
            .verdicts
            .iter()
            .filter(|v| v.classification == class)
            .count();
        manifest.count(&format!("verdicts_{class}"), n as u64);
    }
    manifest
        .write(&args.out_dir)
        .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// validate

fn cmd_validate(args: ValidateArgs) -> CliResult {
    ensure_out_dir(&args.out_dir)?;
    let letter = parse_letter(&args.letter)?;
    if args.tolerance_s < 0 {
        return Err(config_err(anyhow::anyhow!(
            "tolerance must be non-negative"
        )));
    }

    let (verdicts, verdicts_skipped): (Vec<Verdict>, usize) = load_ndjson(&args.verdicts)?;
    let (vp_index, _) = load_vp_index(&args.vps)?;
    let loaded = load_observations(&args.dns, &args.ping, &args.traceroute)?;

    let starts: BTreeSet<i64> = verdicts.iter().map(|v| v.window_start).collect();
    let schedule = Schedule::new(starts.into_iter().collect())
        .map_err(|e| internal_err(anyhow::anyhow!("verdict hours conflict: {e}")))?;
    let windows = build_windows(loaded.observations, &schedule);
    let letter_windows: Vec<&HourlyWindow> =
        windows.iter().filter(|w| w.letter == letter).collect();

    let (log_records, log_skipped) = validate::parse_server_log(open_input(&args.server_log)?)
        .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
    let log = validate::LogIndex::build(&log_records, letter, validate::QNAME, validate::QTYPE)
        .map_err(|e| parse_err(anyhow::anyhow!(e)))?;

    let (match_results, match_stats) =
        validate::match_queries(&letter_windows, &vp_index, &log, args.tolerance_s);

    let letter_verdicts: Vec<Verdict> = verdicts
        .iter()
        .filter(|v| v.letter == letter)
        .cloned()
        .collect();
    let tp_report = validate::true_positive_rates(&match_results, &letter_verdicts);
    let fp_bound = validate::upper_bound_false_positive(&match_results, &letter_verdicts);
    let covert_report =
        validate::confirm_covert_delayers(&letter_verdicts, &match_results, Some(&verdicts));

    // proxy-vs-injection refinement for the validated letter
    let matched_by_key: BTreeMap<(VpId, Letter, i64), bool> = match_results
        .iter()
        .map(|m| ((m.vp_id.clone(), m.letter, m.window_start), m.matched))
        .collect();
    let mut refined = verdicts.clone();
    for v in &mut refined {
        if v.letter != letter || v.classification != Classification::OvertSpoofed {
            continue;
        }
        let Some(&matched) = matched_by_key.get(&(v.vp_id.clone(), v.letter, v.window_start))
        else {
            continue;
        };
        let current = v
            .mechanism
            .unwrap_or(spoofscope_core::model::Mechanism::NonAnycast);
        v.mechanism = Some(mechanism::refine_with_server_log(current, matched));
    }

    write_records(&args.out_dir.join("match_results.ndjson"), &match_results)?;
    write_records(&args.out_dir.join("verdicts_refined.ndjson"), &refined)?;

    #[derive(Serialize)]
    struct ValidationReport<'a> {
        letter: Letter,
        tolerance_s: i64,
        match_stats: &'a validate::MatchStats,
        true_positive: &'a validate::TpReport,
        covert_delayers: &'a validate::CovertConfirmation,
        false_positive_upper_bound: &'a validate::FpBound,
    }
    let report = ValidationReport {
        letter,
        tolerance_s: args.tolerance_s,
        match_stats: &match_stats,
        true_positive: &tp_report,
        covert_delayers: &covert_report,
        false_positive_upper_bound: &fp_bound,
    };
    write_output(
        &args.out_dir.join("validation.json"),
        &serde_json::to_string_pretty(&report).expect("serializes"),
    )?;
    write_output(
        &args.out_dir.join("validation.txt"),
        &validate::render_tables(&tp_report, &covert_report, &fp_bound),
    )?;

    let mut manifest = RunManifest::new("validate");
    manifest.input(&args.verdicts, verdicts.len(), verdicts_skipped);
    manifest.input(&args.server_log, log_records.len(), log_skipped.skipped);
    manifest.count("log_records_indexed", log.records_indexed as u64);
    manifest.count("windows_matched", match_results.len() as u64);
    manifest.count("prefix_collisions", match_stats.prefix_collisions as u64);
    manifest.count("unknown_vps", match_stats.unknown_vps as u64);
    manifest.thresholds = Some(serde_json::json!({ "tolerance_s": args.tolerance_s }));
    manifest
        .write(&args.out_dir)
        .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report

fn cmd_report(args: ReportArgs) -> CliResult {
    ensure_out_dir(&args.out_dir)?;
    let mut manifest = RunManifest::new("report");

    let mut verdicts: Vec<Verdict> = Vec::new();
    for path in &args.verdicts {
        let (mut batch, skipped): (Vec<Verdict>, usize) = load_ndjson(path)?;
        manifest.input(path, batch.len(), skipped);
        verdicts.append(&mut batch);
    }
    for v in &verdicts {
        v.check().map_err(|e| parse_err(anyhow::anyhow!(e)))?;
    }

    let mut by_hour: BTreeMap<i64, Vec<Verdict>> = BTreeMap::new();
    for v in &verdicts {
        by_hour.entry(v.window_start).or_default().push(v.clone());
    }
    let epochs: Vec<(i64, Vec<Verdict>)> = by_hour.into_iter().collect();

    let summaries: Vec<aggregate::EpochSummary> = epochs
        .iter()
        .map(|(start, vs)| aggregate::epoch_summary(*start, vs))
        .collect();
    write_output(
        &args.out_dir.join("summary.json"),
        &aggregate::write_summary_json(&summaries),
    )?;

    let series = aggregate::trend(&summaries);
    write_output(
        &args.out_dir.join("trend.csv"),
        &aggregate::write_trend_csv(&series),
    )?;

    let cohort = aggregate::choose_cohort(&epochs, args.cohort_size);
    let mut cohort_series = None;
    if !cohort.is_empty() {
        let restricted = aggregate::cohort_trend(&epochs, &cohort)
            .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
        write_output(
            &args.out_dir.join("cohort_trend.csv"),
            &aggregate::write_trend_csv(&restricted),
        )?;
        manifest.count("cohort_size", cohort.len() as u64);
        cohort_series = Some(restricted);
    }

    let cdf = aggregate::letter_count_cdf(&verdicts);
    write_output(
        &args.out_dir.join("letter_cdf.csv"),
        &aggregate::write_letter_cdf_csv(&cdf),
    )?;

    let mech = aggregate::mechanism_trend(&epochs);
    write_output(
        &args.out_dir.join("mechanism_trend.csv"),
        &aggregate::write_mechanism_csv(&mech),
    )?;

    let mut countries_report = None;
    let mut improvement_report = None;

    if let Some(vps_path) = &args.vps {
        let (vp_index, _) = load_vp_index(vps_path)?;
        let countries = aggregate::country_fractions(&verdicts, &vp_index, args.min_country_vps);
        write_output(
            &args.out_dir.join("countries.csv"),
            &aggregate::write_countries_csv(&countries),
        )?;
        countries_report = Some(countries);

        if let Some(psl_path) = &args.psl {
            let psl = identity::PublicSuffixList::load(psl_path)
                .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
            let rdns = args
                .rdns_map
                .as_ref()
                .map(identity::ReverseDnsMap::load)
                .transpose()
                .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
            let companies = args
                .company_map
                .as_ref()
                .map(identity::CompanyMap::load)
                .transpose()
                .map_err(|e| parse_err(anyhow::anyhow!(e)))?;
            let (clusters, warnings) = identity::cluster_spoofers(
                &verdicts,
                rdns.as_ref(),
                companies.as_ref(),
                &psl,
                &vp_index,
            );
            manifest.warnings.extend(warnings);

            #[derive(Serialize)]
            struct ClusterReport<'a> {
                clusters: &'a [identity::SpooferCluster],
                category_counts: BTreeMap<identity::Category, u32>,
            }
            write_output(
                &args.out_dir.join("clusters.json"),
                &serde_json::to_string_pretty(&ClusterReport {
                    clusters: &clusters,
                    category_counts: identity::category_counts(&clusters),
                })
                .expect("serializes"),
            )?;

            // verdicts annotated with the spoofing party
            let id_to_cluster: BTreeMap<&str, &str> = clusters
                .iter()
                .flat_map(|c| {
                    c.member_server_ids
                        .iter()
                        .map(move |id| (id.as_str(), c.cluster_id.as_str()))
                })
                .collect();
            let mut annotated = verdicts.clone();
            for v in &mut annotated {
                if v.classification != Classification::OvertSpoofed {
                    continue;
                }
                if let Some(overt) = &v.evidence.overt {
                    v.spoofer_cluster = overt
                        .unmatched_ids()
                        .next()
                        .and_then(|id| id_to_cluster.get(id))
                        .map(|s| (*s).to_owned());
                }
            }
            write_records(&args.out_dir.join("verdicts_clustered.ndjson"), &annotated)?;
            manifest.count("clusters", clusters.len() as u64);
        }
    } else if args.psl.is_some() {
        return Err(config_err(anyhow::anyhow!(
            "clustering needs --vps for the AS of observing VPs"
        )));
    }

    if let Some(sites_path) = &args.known_sites {
        let sites =
            ingest::load_known_sites(sites_path).map_err(|e| parse_err(anyhow::anyhow!(e)))?;
        let improvement = aggregate::latency_improvement(&verdicts, &sites);
        write_output(
            &args.out_dir.join("latency_improvement.csv"),
            &aggregate::write_improvement_csv(&improvement),
        )?;
        manifest.count("latency_improvement_excluded", improvement.excluded as u64);
        improvement_report = Some(improvement);
    }

    // the same series as one machine-readable document, next to the CSVs
    #[derive(Serialize)]
    struct FullReport<'a> {
        summaries: &'a [aggregate::EpochSummary],
        trend: &'a aggregate::TrendSeries,
        #[serde(skip_serializing_if = "Option::is_none")]
        cohort_trend: Option<&'a aggregate::TrendSeries>,
        letter_count_cdf: &'a aggregate::LetterCountCdf,
        mechanism_trend: &'a [aggregate::MechanismRow],
        #[serde(skip_serializing_if = "Option::is_none")]
        countries: Option<&'a aggregate::CountryReport>,
        #[serde(skip_serializing_if = "Option::is_none")]
        latency_improvement: Option<&'a aggregate::ImprovementReport>,
    }
    write_output(
        &args.out_dir.join("report.json"),
        &serde_json::to_string_pretty(&FullReport {
            summaries: &summaries,
            trend: &series,
            cohort_trend: cohort_series.as_ref(),
            letter_count_cdf: &cdf,
            mechanism_trend: &mech,
            countries: countries_report.as_ref(),
            latency_improvement: improvement_report.as_ref(),
        })
        .expect("serializes"),
    )?;

    manifest.count("verdicts", verdicts.len() as u64);
    manifest.count("epochs", epochs.len() as u64);
    manifest
        .write(&args.out_dir)
        .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    ensure_out_dir(&args.out_dir)?;
    let text = fs::read_to_string(&args.scenario).map_err(|e| {
        config_err(anyhow::anyhow!(
            "cannot open {}: {e}",
            args.scenario.display()
        ))
    })?;
    let config = ScenarioConfig::from_toml(&text).map_err(|e| parse_err(anyhow::anyhow!(e)))?;
    let out = simulate::generate(&config).map_err(|e| parse_err(anyhow::anyhow!(e)))?;

    let mut dns = Vec::new();
    let mut ping = Vec::new();
    let mut traceroute = Vec::new();
    for obs in &out.observations {
        match obs {
            Observation::Dns(o) => dns.push(o),
            Observation::Ping(o) => ping.push(o),
            Observation::Traceroute(o) => traceroute.push(o),
        }
    }
    write_records(&args.out_dir.join("dns.ndjson"), &dns)?;
    write_records(&args.out_dir.join("ping.ndjson"), &ping)?;
    write_records(&args.out_dir.join("traceroute.ndjson"), &traceroute)?;
    write_records(&args.out_dir.join("vps.ndjson"), &out.vps)?;
    write_records(&args.out_dir.join("server_log.ndjson"), &out.server_log)?;
    write_records(&args.out_dir.join("ground_truth.ndjson"), &out.truth)?;
    write_output(
        &args.out_dir.join("known_sites.toml"),
        &known_sites_toml(&out),
    )?;
    write_output(&args.out_dir.join("profile.toml"), &out.profile.to_toml())?;
    let schedule_text: String = out
        .schedule
        .starts()
        .iter()
        .map(|s| format!("{s}\n"))
        .collect();
    write_output(&args.out_dir.join("schedule.txt"), &schedule_text)?;

    let mut manifest = RunManifest::new("simulate");
    manifest.seed = Some(config.seed);
    manifest.input(&args.scenario, 1, 0);
    manifest.count("vps", out.vps.len() as u64);
    manifest.count("dns_observations", dns.len() as u64);
    manifest.count("ping_observations", ping.len() as u64);
    manifest.count("traceroute_observations", traceroute.len() as u64);
    manifest.count("server_log_records", out.server_log.len() as u64);
    manifest
        .write(&args.out_dir)
        .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    Ok(())
}

fn known_sites_toml(out: &simulate::SimOutput) -> String {
    let sites = &out.known_sites;
    let mut text = format!("source_date = {:?}\n", sites.source_date);
    for letter in Letter::ALL {
        let entry = sites.entry(letter);
        text.push_str(&format!("\n[letters.{letter}]\n"));
        text.push_str(&format!(
            "service_address = \"{}\"\n",
            entry.service_address
        ));
        text.push_str(&format!("icmp_responsive = {}\n", entry.icmp_responsive));
        let site_list: Vec<String> = entry.sites.iter().map(|s| format!("{s:?}")).collect();
        text.push_str(&format!("sites = [{}]\n", site_list.join(", ")));
        let hop_list: Vec<String> = entry
            .penultimate_hops
            .iter()
            .map(|h| format!("\"{h}\""))
            .collect();
        text.push_str(&format!("penultimate_hops = [{}]\n", hop_list.join(", ")));
    }
    text
}

// ---------------------------------------------------------------------------
// score

fn cmd_score(args: ScoreArgs) -> CliResult {
    ensure_out_dir(&args.out_dir)?;
    let (verdicts, _): (Vec<Verdict>, usize) = load_ndjson(&args.verdicts)?;
    let (truth, _): (Vec<simulate::GroundTruth>, usize) = load_ndjson(&args.truth)?;
    let report = simulate::score(&verdicts, &truth);
    write_output(
        &args.out_dir.join("score.json"),
        &serde_json::to_string_pretty(&report).expect("serializes"),
    )?;
    println!(
        "spoof recall {:.4} precision {:.4} ({} of {} spoofing VPs detected, {} false positives)",
        report.spoof_recall,
        report.spoof_precision,
        report.vp_true_positives,
        report.vp_truth_spoofed,
        report.vp_false_positives
    );

    let mut manifest = RunManifest::new("score");
    manifest.input(&args.verdicts, verdicts.len(), 0);
    manifest.input(&args.truth, truth.len(), 0);
    manifest.count("vp_truth_spoofed", report.vp_truth_spoofed as u64);
    manifest.count("vp_detected_spoofed", report.vp_detected_spoofed as u64);
    manifest
        .write(&args.out_dir)
        .map_err(|e| internal_err(anyhow::anyhow!(e)))?;
    Ok(())
}
