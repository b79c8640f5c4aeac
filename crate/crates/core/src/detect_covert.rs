//! Covert-delayer detection by comparing DNS and ping latency within a
//! window.
//!
//! A third party that forwards DNS queries but processes them adds a
//! consistent latency offset visible against the ICMP baseline. The detector
//! compares the per-window medians with three strict checks: the gap must be
//! large relative to the faster medium (>20%), must exceed measurement spread
//! (>3x the larger MAD), and must be beyond normal jitter (>10 ms).

use serde::{Deserialize, Serialize};

use crate::model::{DelayDirection, HourlyWindow, InsufficientReason};
use crate::stats::{mad, median};

/// Detection thresholds, defaulting to the published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovertConfig {
    /// The gap must exceed this fraction of the smaller median.
    pub ratio: f64,
    /// The gap must exceed this multiple of the larger MAD.
    pub mad_factor: f64,
    /// The gap must exceed this many milliseconds outright.
    pub floor_ms: f64,
    /// Minimum per-side sample count for the medians to be trusted.
    pub min_samples: usize,
}

impl Default for CovertConfig {
    fn default() -> Self {
        CovertConfig {
            ratio: 0.2,
            mad_factor: 3.0,
            floor_ms: 10.0,
            min_samples: 5,
        }
    }
}

/// Robust latency summary of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_dns: f64,
    pub median_ping: f64,
    pub mad_dns: f64,
    pub mad_ping: f64,
    /// `|median_dns - median_ping|`.
    pub delta: f64,
    pub n_dns: usize,
    pub n_ping: usize,
}

impl LatencyStats {
    pub fn from_samples(dns: &[f64], ping: &[f64]) -> Self {
        let median_dns = median(dns);
        let median_ping = median(ping);
        LatencyStats {
            median_dns,
            median_ping,
            mad_dns: mad(dns),
            mad_ping: mad(ping),
            delta: (median_dns - median_ping).abs(),
            n_dns: dns.len(),
            n_ping: ping.len(),
        }
    }

    /// Signed difference; positive when DNS is slower than ping.
    pub fn signed_difference(&self) -> f64 {
        self.median_dns - self.median_ping
    }
}

/// Computes latency stats over a window's answered DNS and successful ping
/// RTTs, or reports why the window cannot be judged.
///
/// DNS observations whose server ID differs from the window's modal site are
/// dropped first (catchment changes would otherwise mix two sites' latency
/// floors). The modal ID must be a unique strict majority; otherwise no site
/// is trusted and the window is insufficient. Returns the stats and how many
/// observations the site filter excluded.
pub fn latency_stats(
    window: &HourlyWindow,
    config: &CovertConfig,
) -> Result<(LatencyStats, u32), InsufficientReason> {
    let answered: Vec<(&str, f64)> = window
        .answered_dns()
        .map(|o| {
            (
                o.server_id.as_deref().unwrap_or_default(),
                o.rtt_ms.unwrap_or_default(),
            )
        })
        .collect();
    if answered.is_empty() {
        return Err(InsufficientReason::NoDnsObservations);
    }

    let modal = modal_site(&answered).ok_or(InsufficientReason::NoModalSite)?;
    let dns_rtts: Vec<f64> = answered
        .iter()
        .filter(|(id, _)| *id == modal)
        .map(|&(_, rtt)| rtt)
        .collect();
    let excluded = (answered.len() - dns_rtts.len()) as u32;

    if dns_rtts.len() < config.min_samples {
        return Err(InsufficientReason::TooFewDnsSamples);
    }
    let ping_rtts = window.successful_ping_rtts();
    if ping_rtts.len() < config.min_samples {
        return Err(InsufficientReason::TooFewPingSamples);
    }

    Ok((LatencyStats::from_samples(&dns_rtts, &ping_rtts), excluded))
}

/// The window's site label: the most frequent server ID, required to be a
/// unique strict majority of the answered observations.
fn modal_site<'a>(answered: &[(&'a str, f64)]) -> Option<&'a str> {
    let mut counts: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for (id, _) in answered {
        *counts.entry(id).or_insert(0) += 1;
    }
    let best = counts.iter().map(|(_, &c)| c).max()?;
    let mut modes = counts.iter().filter(|(_, &c)| c == best).map(|(&id, _)| id);
    let mode = modes.next()?;
    if modes.next().is_some() || best * 2 <= answered.len() {
        return None;
    }
    Some(mode)
}

/// The three checks, individually: (relative gap, spread, absolute floor).
/// All comparisons are strict.
pub fn covert_checks(stats: &LatencyStats, config: &CovertConfig) -> (bool, bool, bool) {
    let d = stats.delta;
    (
        d > config.ratio * stats.median_dns.min(stats.median_ping),
        d > config.mad_factor * stats.mad_dns.max(stats.mad_ping),
        d > config.floor_ms,
    )
}

/// True when all three checks pass.
pub fn is_covert_delayed(stats: &LatencyStats, config: &CovertConfig) -> bool {
    let (ratio_ok, mad_ok, floor_ok) = covert_checks(stats, config);
    ratio_ok && mad_ok && floor_ok
}

/// Which medium is slower. DNS counts as slower only when strictly greater;
/// equal medians report as ping-slower.
pub fn delay_direction(stats: &LatencyStats) -> DelayDirection {
    if stats.median_dns > stats.median_ping {
        DelayDirection::DnsSlower
    } else {
        DelayDirection::PingSlower
    }
}
