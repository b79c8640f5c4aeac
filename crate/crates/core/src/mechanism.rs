//! Spoofing-mechanism inference for overtly spoofed windows.
//!
//! A rogue anycast site captures *all* traffic to the prefix, so its
//! traceroute enters through a router no authentic catchment uses and its DNS
//! latency equals its ping latency. Anything else (proxy or injection) only
//! touches DNS. Client-side data alone separates anycast from non-anycast;
//! server-side log matching later splits non-anycast into proxy vs injection.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::detect_covert::{CovertConfig, LatencyStats};
use crate::ingest::KnownSites;
use crate::model::{HourlyWindow, Letter, Mechanism, Verdict};

/// Penultimate-hop addresses seen by VPs with authentic replies, per letter,
/// within one analysis epoch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenultimateHopSet {
    by_letter: BTreeMap<Letter, BTreeSet<Ipv4Addr>>,
}

impl PenultimateHopSet {
    pub fn insert(&mut self, letter: Letter, hop: Ipv4Addr) {
        self.by_letter.entry(letter).or_default().insert(hop);
    }

    pub fn contains(&self, letter: Letter, hop: Ipv4Addr) -> bool {
        self.by_letter
            .get(&letter)
            .is_some_and(|set| set.contains(&hop))
    }

    pub fn letter_set(&self, letter: Letter) -> Option<&BTreeSet<Ipv4Addr>> {
        self.by_letter.get(&letter)
    }

    /// Union; the reduction over windows is associative and commutative.
    pub fn merge(&mut self, other: PenultimateHopSet) {
        for (letter, hops) in other.by_letter {
            self.by_letter.entry(letter).or_default().extend(hops);
        }
    }
}

/// Builds the legitimate penultimate-hop set from the traceroutes of windows
/// classified valid in the same epoch. Only traceroutes that reached the
/// service address contribute.
pub fn build_penultimate_set(
    verdicts: &[Verdict],
    windows: &BTreeMap<(crate::model::VpId, Letter, i64), &HourlyWindow>,
    sites: &KnownSites,
) -> PenultimateHopSet {
    let mut set = PenultimateHopSet::default();
    for v in verdicts {
        if !v.classification.counts_as_valid() {
            continue;
        }
        let Some(window) = windows.get(&(v.vp_id.clone(), v.letter, v.window_start)) else {
            continue;
        };
        let service = sites.service_address(v.letter);
        for tr in &window.traceroute {
            if !tr.reached {
                continue;
            }
            if let Some(hop) = tr.penultimate_hop(service) {
                set.insert(v.letter, hop);
            }
        }
    }
    set
}

/// Whether a window's DNS and ping latency are "the same" for the purposes of
/// the anycast test: the gap must stay within the larger of the absolute
/// jitter floor and the relative threshold, mirroring the covert-delay
/// constants so one noise model serves both detectors.
pub fn rtt_equal(stats: &LatencyStats, config: &CovertConfig) -> bool {
    let tolerance = config
        .floor_ms
        .max(config.ratio * stats.median_dns.min(stats.median_ping));
    stats.delta <= tolerance
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MechanismCall {
    pub mechanism: Mechanism,
    /// Set when the call degraded to non-anycast for lack of evidence
    /// (no reached traceroute, no computable penultimate hop, or no latency
    /// baseline) rather than by a positive test.
    pub low_confidence: bool,
}

/// Classifies the spoofing mechanism of an overtly spoofed window.
///
/// Anycast requires both conditions: every reached traceroute's penultimate
/// hop is foreign to the letter's authentic set, and DNS RTT equals ping RTT.
/// Foreignness means nothing against an empty authentic set, so a letter with
/// no valid traceroutes in the epoch degrades to non-anycast, low confidence.
pub fn classify_mechanism(
    window: &HourlyWindow,
    hopset: &PenultimateHopSet,
    stats: Option<&LatencyStats>,
    sites: &KnownSites,
    config: &CovertConfig,
) -> MechanismCall {
    let service = sites.service_address(window.letter);
    let no_baseline = hopset
        .letter_set(window.letter)
        .is_none_or(|set| set.is_empty());
    let reached: Vec<_> = window.traceroute.iter().filter(|t| t.reached).collect();
    if no_baseline || reached.is_empty() {
        return MechanismCall {
            mechanism: Mechanism::NonAnycast,
            low_confidence: true,
        };
    }

    let mut all_foreign = true;
    let mut any_unknown = false;
    for tr in &reached {
        match tr.penultimate_hop(service) {
            Some(hop) => {
                if hopset.contains(window.letter, hop) {
                    all_foreign = false;
                }
            }
            None => {
                // star hops all the way to the target: cannot place the path
                any_unknown = true;
                all_foreign = false;
            }
        }
    }

    let rtts_equal = stats.is_some_and(|s| rtt_equal(s, config));
    if all_foreign && rtts_equal {
        MechanismCall {
            mechanism: Mechanism::Anycast,
            low_confidence: false,
        }
    } else {
        MechanismCall {
            mechanism: Mechanism::NonAnycast,
            low_confidence: any_unknown || stats.is_none(),
        }
    }
}

/// Refines a mechanism call with the server-side match outcome: a dropped
/// query means a proxy, a query that reached the server alongside a spoofed
/// answer means injection. Anycast calls are unchanged. Never un-spoofs.
pub fn refine_with_server_log(mechanism: Mechanism, matched_at_server: bool) -> Mechanism {
    match mechanism {
        Mechanism::Anycast => Mechanism::Anycast,
        Mechanism::NonAnycast | Mechanism::Proxy | Mechanism::Injection => {
            if matched_at_server {
                Mechanism::Injection
            } else {
                Mechanism::Proxy
            }
        }
    }
}
