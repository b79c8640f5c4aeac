//! Shared domain types: vantage points, service letters, raw observations,
//! hourly windows, and per-window verdicts.
//!
//! All types are immutable value data once built; windows for distinct
//! (vp, letter, hour) keys can be processed in parallel without shared state.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect_covert::LatencyStats;
use crate::detect_overt::OvertEvidence;

/// Length of one sampling window in seconds.
pub const WINDOW_SECS: i64 = 3600;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("answered DNS observation must carry server_id and a positive rtt")]
    AnsweredWithoutAnswer,
    #[error("timeout DNS observation must not carry server_id or rtt")]
    TimeoutWithPayload,
    #[error("rtt must be positive, got {0}")]
    NonPositiveRtt(f64),
    #[error("traceroute hop TTLs must be strictly increasing")]
    NonIncreasingTtl,
    #[error(
        "traceroute marked reached but last responder {got:?} is not the service address {want}"
    )]
    ReachedMismatch {
        got: Option<Ipv4Addr>,
        want: Ipv4Addr,
    },
    #[error("mechanism may only be set on overt-spoofed verdicts")]
    MechanismOnNonSpoofed,
    #[error("invalid letter {0:?} (expected A..M)")]
    BadLetter(String),
    #[error("invalid /24 prefix {0:?}")]
    BadPrefix(String),
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("scheduled hours overlap: {0} and {1} are less than one hour apart")]
    Overlap(i64, i64),
    #[error("schedule is empty")]
    Empty,
}

/// Stable identifier of a measurement vantage point.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VpId(pub String);

impl VpId {
    pub fn new(id: impl Into<String>) -> Self {
        VpId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VpId {
    fn from(s: &str) -> Self {
        VpId(s.to_owned())
    }
}

/// IPv4 /24 prefix. The low 8 bits are not significant; server logs are
/// anonymized to this granularity, so matching never sees host bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix24(Ipv4Addr);

impl Prefix24 {
    pub fn of(addr: Ipv4Addr) -> Self {
        let o = addr.octets();
        Prefix24(Ipv4Addr::new(o[0], o[1], o[2], 0))
    }

    pub fn network(&self) -> Ipv4Addr {
        self.0
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        Prefix24::of(addr) == *self
    }
}

impl fmt::Display for Prefix24 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/24", self.0)
    }
}

impl FromStr for Prefix24 {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ip_part = s.strip_suffix("/24").unwrap_or(s);
        let addr: Ipv4Addr = ip_part
            .parse()
            .map_err(|_| ModelError::BadPrefix(s.to_owned()))?;
        Ok(Prefix24::of(addr))
    }
}

impl Serialize for Prefix24 {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prefix24 {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The 13 root service letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    J,
    K,
    L,
    M,
}

impl Letter {
    pub const ALL: [Letter; 13] = [
        Letter::A,
        Letter::B,
        Letter::C,
        Letter::D,
        Letter::E,
        Letter::F,
        Letter::G,
        Letter::H,
        Letter::I,
        Letter::J,
        Letter::K,
        Letter::L,
        Letter::M,
    ];

    pub fn as_char(&self) -> char {
        match self {
            Letter::A => 'A',
            Letter::B => 'B',
            Letter::C => 'C',
            Letter::D => 'D',
            Letter::E => 'E',
            Letter::F => 'F',
            Letter::G => 'G',
            Letter::H => 'H',
            Letter::I => 'I',
            Letter::J => 'J',
            Letter::K => 'K',
            Letter::L => 'L',
            Letter::M => 'M',
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Letter {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Letter::A),
            "B" => Ok(Letter::B),
            "C" => Ok(Letter::C),
            "D" => Ok(Letter::D),
            "E" => Ok(Letter::E),
            "F" => Ok(Letter::F),
            "G" => Ok(Letter::G),
            "H" => Ok(Letter::H),
            "I" => Ok(Letter::I),
            "J" => Ok(Letter::J),
            "K" => Ok(Letter::K),
            "L" => Ok(Letter::L),
            "M" => Ok(Letter::M),
            other => Err(ModelError::BadLetter(other.to_owned())),
        }
    }
}

/// One anycast service: letter, probed address, and whether it ever answers
/// ICMP (G never does, so it has no ping baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceLetter {
    pub letter: Letter,
    pub service_address: Ipv4Addr,
    pub icmp_responsive: bool,
}

/// A measurement origin with stable identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VantagePoint {
    pub vp_id: VpId,
    pub public_prefix: Prefix24,
    pub asn: u32,
    pub country: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DnsOutcome {
    Answered,
    Timeout,
    Error,
}

/// One hostname.bind query result from one VP toward one letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnsObservation {
    pub vp_id: VpId,
    pub letter: Letter,
    /// Seconds, UTC.
    pub timestamp: i64,
    pub outcome: DnsOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_ms: Option<f64>,
}

impl DnsObservation {
    pub fn answered(
        vp_id: VpId,
        letter: Letter,
        timestamp: i64,
        server_id: impl Into<String>,
        rtt_ms: f64,
    ) -> Self {
        DnsObservation {
            vp_id,
            letter,
            timestamp,
            outcome: DnsOutcome::Answered,
            server_id: Some(server_id.into()),
            rtt_ms: Some(rtt_ms),
        }
    }

    pub fn timeout(vp_id: VpId, letter: Letter, timestamp: i64) -> Self {
        DnsObservation {
            vp_id,
            letter,
            timestamp,
            outcome: DnsOutcome::Timeout,
            server_id: None,
            rtt_ms: None,
        }
    }

    pub fn error(vp_id: VpId, letter: Letter, timestamp: i64) -> Self {
        DnsObservation {
            vp_id,
            letter,
            timestamp,
            outcome: DnsOutcome::Error,
            server_id: None,
            rtt_ms: None,
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        match self.outcome {
            DnsOutcome::Answered => match (&self.server_id, self.rtt_ms) {
                (Some(_), Some(rtt)) if rtt > 0.0 => Ok(()),
                (Some(_), Some(rtt)) => Err(ModelError::NonPositiveRtt(rtt)),
                _ => Err(ModelError::AnsweredWithoutAnswer),
            },
            DnsOutcome::Timeout => {
                if self.server_id.is_some() || self.rtt_ms.is_some() {
                    Err(ModelError::TimeoutWithPayload)
                } else {
                    Ok(())
                }
            }
            DnsOutcome::Error => Ok(()),
        }
    }
}

/// One ICMP echo result; `rtt_ms` absent on loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PingObservation {
    pub vp_id: VpId,
    pub letter: Letter,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_ms: Option<f64>,
}

impl PingObservation {
    pub fn check(&self) -> Result<(), ModelError> {
        match self.rtt_ms {
            Some(rtt) if rtt <= 0.0 => Err(ModelError::NonPositiveRtt(rtt)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TracerouteHop {
    pub ttl: u8,
    /// Absent when the hop did not respond (a star hop).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responder: Option<Ipv4Addr>,
}

/// One traceroute toward the service address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerouteObservation {
    pub vp_id: VpId,
    pub letter: Letter,
    pub timestamp: i64,
    pub hops: Vec<TracerouteHop>,
    pub reached: bool,
}

impl TracerouteObservation {
    pub fn check(&self) -> Result<(), ModelError> {
        for pair in self.hops.windows(2) {
            if pair[1].ttl <= pair[0].ttl {
                return Err(ModelError::NonIncreasingTtl);
            }
        }
        Ok(())
    }

    /// Consistency of the `reached` flag against the known service address.
    pub fn check_reached(&self, service_address: Ipv4Addr) -> Result<(), ModelError> {
        if !self.reached {
            return Ok(());
        }
        let last = self.hops.iter().rev().find_map(|h| h.responder);
        if last == Some(service_address) {
            Ok(())
        } else {
            Err(ModelError::ReachedMismatch {
                got: last,
                want: service_address,
            })
        }
    }

    /// Last responding hop strictly before the service address. Star hops
    /// are skipped; `None` when no router before the target responded.
    pub fn penultimate_hop(&self, service_address: Ipv4Addr) -> Option<Ipv4Addr> {
        self.hops
            .iter()
            .filter_map(|h| h.responder)
            .take_while(|addr| *addr != service_address)
            .last()
    }
}

/// A raw measurement result of any of the three kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Observation {
    Dns(DnsObservation),
    Ping(PingObservation),
    Traceroute(TracerouteObservation),
}

impl Observation {
    pub fn vp_id(&self) -> &VpId {
        match self {
            Observation::Dns(o) => &o.vp_id,
            Observation::Ping(o) => &o.vp_id,
            Observation::Traceroute(o) => &o.vp_id,
        }
    }

    pub fn letter(&self) -> Letter {
        match self {
            Observation::Dns(o) => o.letter,
            Observation::Ping(o) => o.letter,
            Observation::Traceroute(o) => o.letter,
        }
    }

    pub fn timestamp(&self) -> i64 {
        match self {
            Observation::Dns(o) => o.timestamp,
            Observation::Ping(o) => o.timestamp,
            Observation::Traceroute(o) => o.timestamp,
        }
    }
}

/// All observations from one VP toward one letter within one sampled hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyWindow {
    pub vp_id: VpId,
    pub letter: Letter,
    /// Aligned to the sampled hour; observations lie in
    /// `[window_start, window_start + 3600)`.
    pub window_start: i64,
    pub dns: Vec<DnsObservation>,
    pub ping: Vec<PingObservation>,
    pub traceroute: Vec<TracerouteObservation>,
}

impl HourlyWindow {
    pub fn empty(vp_id: VpId, letter: Letter, window_start: i64) -> Self {
        HourlyWindow {
            vp_id,
            letter,
            window_start,
            dns: Vec::new(),
            ping: Vec::new(),
            traceroute: Vec::new(),
        }
    }

    pub fn key(&self) -> (VpId, Letter, i64) {
        (self.vp_id.clone(), self.letter, self.window_start)
    }

    pub fn answered_dns(&self) -> impl Iterator<Item = &DnsObservation> {
        self.dns
            .iter()
            .filter(|o| o.outcome == DnsOutcome::Answered)
    }

    pub fn n_answered(&self) -> usize {
        self.answered_dns().count()
    }

    pub fn n_timeout(&self) -> usize {
        self.dns
            .iter()
            .filter(|o| o.outcome == DnsOutcome::Timeout)
            .count()
    }

    pub fn successful_ping_rtts(&self) -> Vec<f64> {
        self.ping.iter().filter_map(|o| o.rtt_ms).collect()
    }

    /// Canonical internal ordering, so that windows built from permuted
    /// streams are identical.
    fn sort_contents(&mut self) {
        self.dns.sort_by(|a, b| {
            (a.timestamp, a.outcome, &a.server_id)
                .cmp(&(b.timestamp, b.outcome, &b.server_id))
                .then(cmp_opt_f64(a.rtt_ms, b.rtt_ms))
        });
        self.ping.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then(cmp_opt_f64(a.rtt_ms, b.rtt_ms))
        });
        self.traceroute.sort_by(|a, b| {
            (a.timestamp, a.reached, a.hops.len())
                .cmp(&(b.timestamp, b.reached, b.hops.len()))
                .then_with(|| a.hops.cmp(&b.hops))
        });
    }
}

fn cmp_opt_f64(a: Option<f64>, b: Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    }
}

/// The sampled hours of an analysis run. Hour starts must not overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    starts: Vec<i64>,
}

impl Schedule {
    pub fn new(mut starts: Vec<i64>) -> Result<Self, ScheduleError> {
        if starts.is_empty() {
            return Err(ScheduleError::Empty);
        }
        starts.sort_unstable();
        starts.dedup();
        for pair in starts.windows(2) {
            if pair[1] - pair[0] < WINDOW_SECS {
                return Err(ScheduleError::Overlap(pair[0], pair[1]));
            }
        }
        Ok(Schedule { starts })
    }

    pub fn starts(&self) -> &[i64] {
        &self.starts
    }

    /// The scheduled hour containing `ts`, if any. Hours are half-open
    /// `[start, start + 3600)`.
    pub fn window_for(&self, ts: i64) -> Option<i64> {
        match self.starts.binary_search(&ts) {
            Ok(i) => Some(self.starts[i]),
            Err(0) => None,
            Err(i) => {
                let start = self.starts[i - 1];
                (ts - start < WINDOW_SECS).then_some(start)
            }
        }
    }
}

/// Groups observations into hourly windows.
///
/// Observations outside every scheduled hour are dropped; empty windows are
/// omitted. The result is sorted by (vp, letter, window start) and is
/// independent of the input ordering.
pub fn build_windows(
    observations: impl IntoIterator<Item = Observation>,
    schedule: &Schedule,
) -> Vec<HourlyWindow> {
    let mut by_key: BTreeMap<(VpId, Letter, i64), HourlyWindow> = BTreeMap::new();
    for obs in observations {
        let Some(start) = schedule.window_for(obs.timestamp()) else {
            continue;
        };
        let key = (obs.vp_id().clone(), obs.letter(), start);
        let window = by_key
            .entry(key)
            .or_insert_with(|| HourlyWindow::empty(obs.vp_id().clone(), obs.letter(), start));
        match obs {
            Observation::Dns(o) => window.dns.push(o),
            Observation::Ping(o) => window.ping.push(o),
            Observation::Traceroute(o) => window.traceroute.push(o),
        }
    }
    let mut windows: Vec<HourlyWindow> = by_key.into_values().collect();
    for w in &mut windows {
        w.sort_contents();
    }
    windows
}

/// Per-window detection outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Valid,
    OvertSpoofed,
    /// DNS consistently slower (or faster) than ping past the detection
    /// thresholds, with the query still forwarded. Counted as valid in all
    /// spoof-fraction aggregates.
    CovertDelayed,
    Timeout,
    Insufficient,
}

impl Classification {
    /// Whether the window counts as answered-and-not-spoofed in aggregates.
    pub fn counts_as_valid(&self) -> bool {
        matches!(self, Classification::Valid | Classification::CovertDelayed)
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Classification::Valid => "valid",
            Classification::OvertSpoofed => "overt_spoofed",
            Classification::CovertDelayed => "covert_delayed",
            Classification::Timeout => "timeout",
            Classification::Insufficient => "insufficient",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Anycast,
    NonAnycast,
    Injection,
    Proxy,
}

impl Mechanism {
    /// Proxy and injection are refinements of the non-anycast call.
    pub fn is_non_anycast(&self) -> bool {
        !matches!(self, Mechanism::Anycast)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayDirection {
    DnsSlower,
    PingSlower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsufficientReason {
    NoDnsObservations,
    OnlyErrors,
    TooFewDnsSamples,
    TooFewPingSamples,
    NoModalSite,
}

/// Structured record of what a verdict is based on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overt: Option<OvertEvidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_direction: Option<DelayDirection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insufficient_reason: Option<InsufficientReason>,
    /// DNS observations excluded as catchment changes before latency stats.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub catchment_excluded: u32,
    /// Set when the mechanism call lacked a usable traceroute or latency
    /// baseline and degraded to non-anycast by default.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mechanism_low_confidence: bool,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl Evidence {
    pub fn is_empty(&self) -> bool {
        *self == Evidence::default()
    }
}

/// Detection outcome for one (vp, letter, hour) window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub vp_id: VpId,
    pub letter: Letter,
    pub window_start: i64,
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<Mechanism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spoofer_cluster: Option<String>,
    #[serde(default, skip_serializing_if = "Evidence::is_empty")]
    pub evidence: Evidence,
}

impl Verdict {
    pub fn new(
        vp_id: VpId,
        letter: Letter,
        window_start: i64,
        classification: Classification,
    ) -> Self {
        Verdict {
            vp_id,
            letter,
            window_start,
            classification,
            mechanism: None,
            spoofer_cluster: None,
            evidence: Evidence::default(),
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.mechanism.is_some() && self.classification != Classification::OvertSpoofed {
            return Err(ModelError::MechanismOnNonSpoofed);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vp(n: u32) -> VpId {
        VpId::new(format!("vp{n:03}"))
    }

    #[test]
    fn prefix_masks_low_bits() {
        let p = Prefix24::of(Ipv4Addr::new(192, 0, 2, 77));
        assert_eq!(p.network(), Ipv4Addr::new(192, 0, 2, 0));
        assert!(p.contains(Ipv4Addr::new(192, 0, 2, 255)));
        assert!(!p.contains(Ipv4Addr::new(192, 0, 3, 1)));
        assert_eq!(p.to_string(), "192.0.2.0/24");
        assert_eq!("192.0.2.9/24".parse::<Prefix24>().unwrap(), p);
    }

    #[test]
    fn dns_observation_invariants() {
        assert!(
            DnsObservation::answered(vp(1), Letter::A, 0, "nnn1-lon3", 12.5)
                .check()
                .is_ok()
        );
        assert!(DnsObservation::timeout(vp(1), Letter::A, 0).check().is_ok());

        let mut bad = DnsObservation::answered(vp(1), Letter::A, 0, "x", 0.0);
        assert!(bad.check().is_err());
        bad = DnsObservation::timeout(vp(1), Letter::A, 0);
        bad.rtt_ms = Some(3.0);
        assert!(bad.check().is_err());
    }

    #[test]
    fn traceroute_ttl_and_penultimate() {
        let service = Ipv4Addr::new(199, 9, 14, 201);
        let tr = TracerouteObservation {
            vp_id: vp(1),
            letter: Letter::B,
            timestamp: 0,
            hops: vec![
                TracerouteHop {
                    ttl: 1,
                    responder: Some(Ipv4Addr::new(10, 0, 0, 1)),
                },
                TracerouteHop {
                    ttl: 2,
                    responder: None,
                },
                TracerouteHop {
                    ttl: 3,
                    responder: Some(Ipv4Addr::new(10, 0, 0, 3)),
                },
                TracerouteHop {
                    ttl: 4,
                    responder: Some(service),
                },
            ],
            reached: true,
        };
        tr.check().unwrap();
        tr.check_reached(service).unwrap();
        assert_eq!(
            tr.penultimate_hop(service),
            Some(Ipv4Addr::new(10, 0, 0, 3))
        );

        let mut unordered = tr.clone();
        unordered.hops[1].ttl = 1;
        assert!(unordered.check().is_err());

        let mut wrong_target = tr.clone();
        wrong_target.hops.pop();
        assert!(wrong_target.check_reached(service).is_err());
    }

    #[test]
    fn star_only_prefix_has_no_penultimate() {
        let service = Ipv4Addr::new(199, 9, 14, 201);
        let tr = TracerouteObservation {
            vp_id: vp(1),
            letter: Letter::B,
            timestamp: 0,
            hops: vec![
                TracerouteHop {
                    ttl: 1,
                    responder: None,
                },
                TracerouteHop {
                    ttl: 2,
                    responder: Some(service),
                },
            ],
            reached: true,
        };
        assert_eq!(tr.penultimate_hop(service), None);
    }

    #[test]
    fn schedule_rejects_overlap() {
        assert!(Schedule::new(vec![0, 1800]).is_err());
        assert!(Schedule::new(vec![]).is_err());
        let s = Schedule::new(vec![7200, 0]).unwrap();
        assert_eq!(s.starts(), &[0, 7200]);
    }

    #[test]
    fn window_boundary_is_half_open() {
        let s = Schedule::new(vec![3600]).unwrap();
        assert_eq!(s.window_for(3600), Some(3600));
        assert_eq!(s.window_for(7199), Some(3600));
        assert_eq!(s.window_for(7200), None);
        assert_eq!(s.window_for(3599), None);

        // an observation at start + 3600 exactly is excluded
        let obs = vec![Observation::Dns(DnsObservation::timeout(
            vp(1),
            Letter::A,
            7200,
        ))];
        assert!(build_windows(obs, &s).is_empty());
    }

    #[test]
    fn full_cadence_lands_in_one_window() {
        let start = 1_588_464_000;
        let s = Schedule::new(vec![start]).unwrap();
        let mut obs = Vec::new();
        for i in 0..15 {
            obs.push(Observation::Dns(DnsObservation::answered(
                vp(1),
                Letter::A,
                start + i * 240,
                "nnn1-lax2",
                10.0,
            )));
            obs.push(Observation::Ping(PingObservation {
                vp_id: vp(1),
                letter: Letter::A,
                timestamp: start + i * 240,
                rtt_ms: Some(9.5),
            }));
        }
        for i in 0..2 {
            obs.push(Observation::Traceroute(TracerouteObservation {
                vp_id: vp(1),
                letter: Letter::A,
                timestamp: start + i * 1800,
                hops: vec![],
                reached: false,
            }));
        }
        let windows = build_windows(obs, &s);
        assert_eq!(windows.len(), 1);
        let w = &windows[0];
        assert_eq!((w.dns.len(), w.ping.len(), w.traceroute.len()), (15, 15, 2));
    }

    #[test]
    fn verdict_mechanism_only_on_spoofed() {
        let mut v = Verdict::new(vp(1), Letter::A, 0, Classification::Valid);
        v.mechanism = Some(Mechanism::Proxy);
        assert!(v.check().is_err());
        v.classification = Classification::OvertSpoofed;
        assert!(v.check().is_ok());
    }
}
