//! Validation of client-side verdicts against anonymized authoritative-server
//! logs.
//!
//! Server logs carry only /24-prefix precision, so a client query "matches"
//! when some log record shares its prefix, query name, and query type within
//! the probing interval. A spoof or timeout verdict is counted correct when
//! the query never shows up at the server; matches are one-sided evidence
//! (an injected query still reaches the server, a timed-out reply may have
//! been dropped on the way back), so measured rates are lower bounds on the
//! true-positive rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{IngestError, SkipReport};
use crate::model::{
    Classification, DelayDirection, HourlyWindow, Letter, Mechanism, Prefix24, VantagePoint,
    Verdict, VpId,
};
use crate::stats::{mean, quantile};

/// Query name every observation in this pipeline asks for.
pub const QNAME: &str = "hostname.bind";
/// Query type marker used in the canonical server-log schema.
pub const QTYPE: &str = "TXT";
/// Match window in seconds, one probing interval on each side.
pub const DEFAULT_TOLERANCE_S: i64 = 240;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("server log is not sorted by timestamp (record {index})")]
    UnsortedLog { index: usize },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// One anonymized authoritative-side query record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerLogRecord {
    pub timestamp: i64,
    /// Source address at /24 precision; the low 8 bits were scrambled.
    pub source_prefix: Prefix24,
    pub query_type: String,
    pub qname: String,
    pub letter: Letter,
}

pub fn parse_server_log(
    input: impl std::io::Read,
) -> Result<(Vec<ServerLogRecord>, SkipReport), IngestError> {
    crate::ingest::parse_record_stream(input, |_: &ServerLogRecord| Ok(()))
}

/// Sorted per-prefix timestamp index over one letter's log.
#[derive(Debug)]
pub struct LogIndex {
    by_prefix: BTreeMap<Prefix24, Vec<i64>>,
    pub records_indexed: usize,
}

impl LogIndex {
    /// Builds the index for one letter, keeping only records with the
    /// expected query name and type. The input must be timestamp-sorted.
    pub fn build(
        records: &[ServerLogRecord],
        letter: Letter,
        qname: &str,
        qtype: &str,
    ) -> Result<Self, ValidateError> {
        for (i, pair) in records.windows(2).enumerate() {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(ValidateError::UnsortedLog { index: i + 1 });
            }
        }
        let mut by_prefix: BTreeMap<Prefix24, Vec<i64>> = BTreeMap::new();
        let mut n = 0usize;
        for r in records {
            if r.letter == letter
                && r.qname.eq_ignore_ascii_case(qname)
                && r.query_type.eq_ignore_ascii_case(qtype)
            {
                by_prefix
                    .entry(r.source_prefix)
                    .or_default()
                    .push(r.timestamp);
                n += 1;
            }
        }
        Ok(LogIndex {
            by_prefix,
            records_indexed: n,
        })
    }

    /// Any record for `prefix` within `tolerance` seconds of `ts`?
    pub fn matches(&self, prefix: Prefix24, ts: i64, tolerance: i64) -> bool {
        let Some(times) = self.by_prefix.get(&prefix) else {
            return false;
        };
        let lo = ts - tolerance;
        let idx = times.partition_point(|&t| t < lo);
        times.get(idx).is_some_and(|&t| t <= ts + tolerance)
    }
}

/// Per-window match outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub vp_id: VpId,
    pub letter: Letter,
    pub window_start: i64,
    pub queries_sent: u32,
    pub queries_matched: u32,
    pub matched: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MatchStats {
    /// /24 prefixes shared by more than one VP in this batch; matches there
    /// are attributed to every sharing VP since anonymization cannot split
    /// them.
    pub prefix_collisions: u32,
    /// Windows skipped because their VP is missing from the index.
    pub unknown_vps: u32,
}

/// Matches one letter's windows against the server log.
///
/// For a window that mixes successes and timeouts only the successes are
/// validated; all-timeout windows validate their timed-out queries instead
/// (did the query reach the server even though the reply never came back?).
pub fn match_queries(
    windows: &[&HourlyWindow],
    vp_index: &BTreeMap<VpId, VantagePoint>,
    log: &LogIndex,
    tolerance_s: i64,
) -> (Vec<MatchResult>, MatchStats) {
    let mut stats = MatchStats::default();

    let mut prefix_users: BTreeMap<Prefix24, u32> = BTreeMap::new();
    for w in windows {
        if let Some(vp) = vp_index.get(&w.vp_id) {
            *prefix_users.entry(vp.public_prefix).or_insert(0) += 1;
        }
    }
    stats.prefix_collisions = prefix_users.values().filter(|&&n| n > 1).count() as u32;

    let mut results = Vec::with_capacity(windows.len());
    for w in windows {
        let Some(vp) = vp_index.get(&w.vp_id) else {
            stats.unknown_vps += 1;
            continue;
        };
        let answered: Vec<i64> = w.answered_dns().map(|o| o.timestamp).collect();
        let queries: Vec<i64> = if answered.is_empty() {
            w.dns
                .iter()
                .filter(|o| o.outcome == crate::model::DnsOutcome::Timeout)
                .map(|o| o.timestamp)
                .collect()
        } else {
            answered
        };
        let queries_matched = queries
            .iter()
            .filter(|&&ts| log.matches(vp.public_prefix, ts, tolerance_s))
            .count() as u32;
        results.push(MatchResult {
            vp_id: w.vp_id.clone(),
            letter: w.letter,
            window_start: w.window_start,
            queries_sent: queries.len() as u32,
            queries_matched,
            matched: queries_matched > 0,
        });
    }
    (results, stats)
}

/// Two-decimal display bound for a rate that is a lower bound on the truth:
/// rounded up, the way the summary tables quote it.
pub fn ceil_2dp(rate: f64) -> f64 {
    ((rate * 100.0) - 1e-9).ceil() / 100.0
}

/// Two-decimal display for an upper bound: rounded down.
pub fn floor_2dp(rate: f64) -> f64 {
    ((rate * 100.0) + 1e-9).floor() / 100.0
}

/// Counts and rates for one verdict class in one sampled hour.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    /// Windows of this class that had queries to validate.
    pub sent: u32,
    /// Windows whose queries showed up at the server.
    pub received: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp_exact: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp_display: Option<f64>,
}

impl ClassRates {
    fn absent_is_correct(sent: u32, received: u32) -> Self {
        let tp = (sent > 0).then(|| 1.0 - received as f64 / sent as f64);
        ClassRates {
            sent,
            received,
            tp_exact: tp,
            tp_display: tp.map(ceil_2dp),
        }
    }

    fn present_is_correct(sent: u32, received: u32) -> Self {
        let tp = (sent > 0).then(|| received as f64 / sent as f64);
        ClassRates {
            sent,
            received,
            tp_exact: tp,
            tp_display: tp,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HourRates {
    pub window_start: i64,
    pub active: u32,
    pub active_received: u32,
    pub timeout: ClassRates,
    pub spoofed: ClassRates,
    pub non_anycast: ClassRates,
    pub anycast: ClassRates,
    pub not_spoofed: ClassRates,
    /// Not-spoofed windows without a server-side match (stale VP metadata,
    /// multi-homing); reported, never counted against spoof detection.
    pub residual_unmatched: u32,
}

/// Min/max and quartiles of a class's exact TP rate across sampled hours.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateBand {
    pub min: f64,
    pub max: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

fn band(values: &[f64]) -> Option<RateBand> {
    if values.is_empty() {
        return None;
    }
    Some(RateBand {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        q25: quantile(values, 0.25),
        q50: quantile(values, 0.50),
        q75: quantile(values, 0.75),
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TpReport {
    pub per_hour: Vec<HourRates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_band: Option<RateBand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spoof_band: Option<RateBand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub not_spoofed_band: Option<RateBand>,
}

/// Joins match results with verdicts into per-class true-positive rates, per
/// sampled hour plus range/quartile bands across hours.
pub fn true_positive_rates(match_results: &[MatchResult], verdicts: &[Verdict]) -> TpReport {
    let by_key: BTreeMap<(VpId, Letter, i64), &MatchResult> = match_results
        .iter()
        .map(|m| ((m.vp_id.clone(), m.letter, m.window_start), m))
        .collect();

    let mut hours: BTreeMap<i64, Vec<(&Verdict, &MatchResult)>> = BTreeMap::new();
    for v in verdicts {
        if let Some(m) = by_key.get(&(v.vp_id.clone(), v.letter, v.window_start)) {
            hours.entry(v.window_start).or_default().push((v, m));
        }
    }

    let mut per_hour = Vec::new();
    for (hour, pairs) in hours {
        let count = |pred: &dyn Fn(&Verdict) -> bool| -> (u32, u32) {
            let mut sent = 0;
            let mut received = 0;
            for (v, m) in pairs.iter().filter(|(v, _)| pred(v)) {
                let _ = v;
                sent += 1;
                if m.matched {
                    received += 1;
                }
            }
            (sent, received)
        };

        let (t_sent, t_recv) = count(&|v| v.classification == Classification::Timeout);
        let (s_sent, s_recv) = count(&|v| v.classification == Classification::OvertSpoofed);
        let (na_sent, na_recv) = count(&|v| {
            v.classification == Classification::OvertSpoofed
                && v.mechanism.is_some_and(|m| m.is_non_anycast())
        });
        let (a_sent, a_recv) = count(&|v| {
            v.classification == Classification::OvertSpoofed
                && v.mechanism == Some(Mechanism::Anycast)
        });
        let (ns_sent, ns_recv) = count(&|v| v.classification.counts_as_valid());

        per_hour.push(HourRates {
            window_start: hour,
            active: t_sent + s_sent + ns_sent,
            active_received: t_recv + s_recv + ns_recv,
            timeout: ClassRates::absent_is_correct(t_sent, t_recv),
            spoofed: ClassRates::absent_is_correct(s_sent, s_recv),
            non_anycast: ClassRates::absent_is_correct(na_sent, na_recv),
            anycast: ClassRates::absent_is_correct(a_sent, a_recv),
            not_spoofed: ClassRates::present_is_correct(ns_sent, ns_recv),
            residual_unmatched: ns_sent - ns_recv,
        });
    }

    let collect = |f: &dyn Fn(&HourRates) -> Option<f64>| -> Vec<f64> {
        per_hour.iter().filter_map(f).collect()
    };
    let timeout_band = band(&collect(&|h| h.timeout.tp_exact));
    let spoof_band = band(&collect(&|h| h.spoofed.tp_exact));
    let not_spoofed_band = band(&collect(&|h| h.not_spoofed.tp_exact));

    TpReport {
        per_hour,
        timeout_band,
        spoof_band,
        not_spoofed_band,
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DirectionStats {
    pub detected: u32,
    pub reached: u32,
    /// Mean of the signed per-VP median difference (DNS minus ping), ms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_difference_ms: Option<f64>,
}

/// Server-side confirmation of covert delayers: a delayer forwards queries,
/// so every one should appear in the log. A delayer whose queries never
/// arrived is flagged anomalous.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CovertConfirmation {
    pub n_delayers: u32,
    pub n_reached: u32,
    pub dns_slower: DirectionStats,
    pub ping_slower: DirectionStats,
    pub anomalies: Vec<VpId>,
    /// Fraction of delaying VPs seen covert-delayed on at least one other
    /// letter in the same hour, when multi-letter verdicts are provided.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi_letter_fraction: Option<f64>,
}

pub fn confirm_covert_delayers(
    delayer_verdicts: &[Verdict],
    match_results: &[MatchResult],
    all_verdicts: Option<&[Verdict]>,
) -> CovertConfirmation {
    let matched: BTreeMap<(VpId, Letter, i64), bool> = match_results
        .iter()
        .map(|m| ((m.vp_id.clone(), m.letter, m.window_start), m.matched))
        .collect();

    let mut report = CovertConfirmation::default();
    let mut diffs_dns_slower = Vec::new();
    let mut diffs_ping_slower = Vec::new();

    for v in delayer_verdicts {
        if v.classification != Classification::CovertDelayed {
            continue;
        }
        report.n_delayers += 1;
        let reached = matched
            .get(&(v.vp_id.clone(), v.letter, v.window_start))
            .copied()
            .unwrap_or(false);
        if reached {
            report.n_reached += 1;
        } else {
            report.anomalies.push(v.vp_id.clone());
        }
        let diff = v.evidence.latency.map(|s| s.signed_difference());
        let direction = v.evidence.delay_direction;
        match direction {
            Some(DelayDirection::DnsSlower) => {
                report.dns_slower.detected += 1;
                if reached {
                    report.dns_slower.reached += 1;
                }
                if let Some(d) = diff {
                    diffs_dns_slower.push(d);
                }
            }
            Some(DelayDirection::PingSlower) | None => {
                report.ping_slower.detected += 1;
                if reached {
                    report.ping_slower.reached += 1;
                }
                if let Some(d) = diff {
                    diffs_ping_slower.push(d);
                }
            }
        }
    }
    if !diffs_dns_slower.is_empty() {
        report.dns_slower.mean_difference_ms = Some(mean(&diffs_dns_slower));
    }
    if !diffs_ping_slower.is_empty() {
        report.ping_slower.mean_difference_ms = Some(mean(&diffs_ping_slower));
    }

    if let Some(all) = all_verdicts {
        let delaying_vps: Vec<&Verdict> = delayer_verdicts
            .iter()
            .filter(|v| v.classification == Classification::CovertDelayed)
            .collect();
        if !delaying_vps.is_empty() {
            let multi = delaying_vps
                .iter()
                .filter(|v| {
                    all.iter().any(|o| {
                        o.vp_id == v.vp_id
                            && o.window_start == v.window_start
                            && o.letter != v.letter
                            && o.classification == Classification::CovertDelayed
                    })
                })
                .count();
            report.multi_letter_fraction = Some(multi as f64 / delaying_vps.len() as f64);
        }
    }
    report
}

/// Upper bound on the false-positive rate of spoof detection: the fraction of
/// spoofed windows whose query reached the server. Injection makes these
/// ambiguous (the query passes through *and* the answer was spoofed), so this
/// is a bound, never a false-positive count.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FpBound {
    pub spoofed: u32,
    pub spoofed_matched: u32,
    pub bound_exact: f64,
    pub bound_display: f64,
}

pub fn upper_bound_false_positive(match_results: &[MatchResult], verdicts: &[Verdict]) -> FpBound {
    let by_key: BTreeMap<(VpId, Letter, i64), &MatchResult> = match_results
        .iter()
        .map(|m| ((m.vp_id.clone(), m.letter, m.window_start), m))
        .collect();
    let mut spoofed = 0;
    let mut matched = 0;
    for v in verdicts {
        if v.classification != Classification::OvertSpoofed {
            continue;
        }
        let Some(m) = by_key.get(&(v.vp_id.clone(), v.letter, v.window_start)) else {
            continue;
        };
        spoofed += 1;
        if m.matched {
            matched += 1;
        }
    }
    let bound = if spoofed > 0 {
        matched as f64 / spoofed as f64
    } else {
        0.0
    };
    FpBound {
        spoofed,
        spoofed_matched: matched,
        bound_exact: bound,
        bound_display: floor_2dp(bound),
    }
}

fn fmt_rate(r: &ClassRates, absent_correct: bool) -> String {
    match (r.tp_exact, r.tp_display) {
        (Some(t), Some(d)) if absent_correct && t < 1.0 => format!(">={d:.2}"),
        (Some(_), Some(d)) => format!("{d:.2}"),
        _ => "-".to_owned(),
    }
}

/// Renders the per-hour validation table and the cross-hour band table as
/// aligned text.
pub fn render_tables(report: &TpReport, covert: &CovertConfirmation, fp: &FpBound) -> String {
    let mut out = String::new();
    for h in &report.per_hour {
        out.push_str(&format!("hour {}\n", h.window_start));
        out.push_str(&format!(
            "{:<24}{:>8}{:>10}  {}\n",
            "", "sent", "received", "true positive rate"
        ));
        out.push_str(&format!(
            "{:<24}{:>8}{:>10}  -\n",
            "active VPs", h.active, h.active_received
        ));
        let rows = [
            ("  timeout", &h.timeout, true),
            ("  spoofed", &h.spoofed, true),
            ("    non-anycast", &h.non_anycast, true),
            ("    anycast", &h.anycast, true),
            ("  not spoofed", &h.not_spoofed, false),
        ];
        for (name, rates, absent) in rows {
            out.push_str(&format!(
                "{:<24}{:>8}{:>10}  {}\n",
                name,
                rates.sent,
                rates.received,
                fmt_rate(rates, absent)
            ));
        }
        out.push('\n');
    }

    out.push_str("true-positive rate across hours\n");
    out.push_str(&format!(
        "{:<12}{:<16}{:>8}{:>8}{:>8}\n",
        "detection", "[min, max]", "q25", "q50", "q75"
    ));
    let bands = [
        ("timeout", &report.timeout_band),
        ("spoof", &report.spoof_band),
        ("not spoof", &report.not_spoofed_band),
    ];
    for (name, b) in bands {
        if let Some(b) = b {
            out.push_str(&format!(
                "{:<12}[{:.2}, {:.2}]    {:>7.4}{:>8.4}{:>8.4}\n",
                name, b.min, b.max, b.q25, b.q50, b.q75
            ));
        }
    }
    out.push('\n');

    out.push_str("covert delayers\n");
    out.push_str(&format!(
        "{:<24}{:>9}{:>9}  {}\n",
        "", "detected", "reached", "mean RTT_dns - RTT_ping"
    ));
    out.push_str(&format!(
        "{:<24}{:>9}{:>9}  -\n",
        "covert delayers", covert.n_delayers, covert.n_reached
    ));
    let dirs = [
        ("  dns slower", &covert.dns_slower),
        ("  ping slower", &covert.ping_slower),
    ];
    for (name, d) in dirs {
        let diff = d
            .mean_difference_ms
            .map(|m| format!("{m:+.2} ms"))
            .unwrap_or_else(|| "-".to_owned());
        out.push_str(&format!(
            "{:<24}{:>9}{:>9}  {}\n",
            name, d.detected, d.reached, diff
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "false-positive upper bound: {:.2} ({} of {} spoofed windows matched; injection makes these ambiguous)\n",
        fp.bound_display, fp.spoofed_matched, fp.spoofed
    ));
    out
}
