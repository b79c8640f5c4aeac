//! End-to-end detection over a batch of windows: overt classification,
//! covert-delay refinement, then mechanism inference for the spoofed windows
//! against the epoch's authentic penultimate-hop set.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect_covert::{self, CovertConfig};
use crate::detect_overt;
use crate::ingest::{KnownSites, PatternProfile};
use crate::mechanism::{self, PenultimateHopSet};
use crate::model::{Classification, HourlyWindow, Letter, Verdict, VpId};

/// All tunables of a detection run, with the published defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub covert: CovertConfig,
    /// Server-log match window, seconds.
    pub match_tolerance_s: i64,
    /// Countries with fewer active VPs are flagged under-sampled.
    pub min_country_vps: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            covert: CovertConfig::default(),
            match_tolerance_s: crate::validate::DEFAULT_TOLERANCE_S,
            min_country_vps: 10,
        }
    }
}

#[derive(Debug)]
pub struct DetectOutcome {
    /// Verdicts sorted by (vp, letter, window start).
    pub verdicts: Vec<Verdict>,
    /// Authentic penultimate-hop set per epoch, kept for reporting.
    pub hopsets: BTreeMap<i64, PenultimateHopSet>,
}

/// Classifies every window and attributes mechanisms to spoofed ones.
///
/// Windows are classified independently in parallel; the mechanism pass needs
/// the epoch-wide hop set of authentic traceroutes, so it runs second.
pub fn detect_windows(
    windows: &[HourlyWindow],
    profile: &PatternProfile,
    sites: &KnownSites,
    config: &PipelineConfig,
) -> DetectOutcome {
    let mut verdicts: Vec<Verdict> = windows
        .par_iter()
        .map(|w| classify_one(w, profile, sites, &config.covert))
        .collect();

    let window_index: BTreeMap<(VpId, Letter, i64), &HourlyWindow> =
        windows.iter().map(|w| (w.key(), w)).collect();

    // epoch (hour) -> hop set from windows judged authentic in pass one
    let mut hopsets: BTreeMap<i64, PenultimateHopSet> = BTreeMap::new();
    for (&hour, group) in &group_by_hour(&verdicts) {
        let hour_verdicts: Vec<Verdict> = group.iter().map(|&i| verdicts[i].clone()).collect();
        hopsets.insert(
            hour,
            mechanism::build_penultimate_set(&hour_verdicts, &window_index, sites),
        );
    }

    verdicts.par_iter_mut().for_each(|v| {
        if v.classification != Classification::OvertSpoofed {
            return;
        }
        let Some(window) = window_index.get(&(v.vp_id.clone(), v.letter, v.window_start)) else {
            return;
        };
        let hopset = &hopsets[&v.window_start];
        let stats = v.evidence.latency;
        let call =
            mechanism::classify_mechanism(window, hopset, stats.as_ref(), sites, &config.covert);
        v.mechanism = Some(call.mechanism);
        v.evidence.mechanism_low_confidence = call.low_confidence;
    });

    verdicts.sort_by(|a, b| {
        (&a.vp_id, a.letter, a.window_start).cmp(&(&b.vp_id, b.letter, b.window_start))
    });
    DetectOutcome { verdicts, hopsets }
}

fn group_by_hour(verdicts: &[Verdict]) -> BTreeMap<i64, Vec<usize>> {
    let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, v) in verdicts.iter().enumerate() {
        map.entry(v.window_start).or_default().push(i);
    }
    map
}

/// Overt pass plus covert refinement for one window.
fn classify_one(
    window: &HourlyWindow,
    profile: &PatternProfile,
    sites: &KnownSites,
    covert: &CovertConfig,
) -> Verdict {
    let mut verdict = detect_overt::classify_window(window, profile);

    match verdict.classification {
        Classification::Valid => {
            // letters without a ping baseline are never judged for delay
            if !sites.icmp_responsive(window.letter) {
                return verdict;
            }
            match detect_covert::latency_stats(window, covert) {
                Ok((stats, excluded)) => {
                    verdict.evidence.latency = Some(stats);
                    verdict.evidence.catchment_excluded = excluded;
                    verdict.evidence.delay_direction = Some(detect_covert::delay_direction(&stats));
                    if detect_covert::is_covert_delayed(&stats, covert) {
                        verdict.classification = Classification::CovertDelayed;
                    }
                }
                Err(_) => {
                    // stays valid on server-ID evidence; stats just unavailable
                }
            }
        }
        Classification::OvertSpoofed => {
            // stats still power mechanism inference and the latency reports
            if let (true, Ok((stats, excluded))) = (
                sites.icmp_responsive(window.letter),
                detect_covert::latency_stats(window, covert),
            ) {
                verdict.evidence.latency = Some(stats);
                verdict.evidence.catchment_excluded = excluded;
            }
        }
        _ => {}
    }
    verdict
}
