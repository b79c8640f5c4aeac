//! Overt-spoofer detection from server-ID evidence.
//!
//! Root operators answer hostname.bind with IDs following per-operator naming
//! conventions; overt spoofers answer with their own names. A window is
//! overtly spoofed when any answered server ID matches none of the letter's
//! profile patterns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::PatternProfile;
use crate::model::{Classification, HourlyWindow, InsufficientReason, Verdict};

/// The server-ID multiset of one window, with the per-ID profile outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OvertEvidence {
    pub observed: Vec<ObservedId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_unmatched: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedId {
    pub id: String,
    pub count: u32,
    pub matched: bool,
}

impl OvertEvidence {
    pub fn matched_count(&self) -> u32 {
        self.observed
            .iter()
            .filter(|o| o.matched)
            .map(|o| o.count)
            .sum()
    }

    pub fn unmatched_count(&self) -> u32 {
        self.observed
            .iter()
            .filter(|o| !o.matched)
            .map(|o| o.count)
            .sum()
    }

    pub fn unmatched_ids(&self) -> impl Iterator<Item = &str> {
        self.observed
            .iter()
            .filter(|o| !o.matched)
            .map(|o| o.id.as_str())
    }

    /// True when the window mixed legitimate and atypical IDs (the flapping
    /// pattern); kept in evidence so reports can re-score under a majority
    /// rule instead of the taint rule.
    pub fn is_mixed(&self) -> bool {
        self.matched_count() > 0 && self.unmatched_count() > 0
    }
}

/// Classifies one window from server-ID evidence alone.
///
/// Timeout requires evidence of attempted queries: a window with no DNS
/// observations at all (or only malformed-reply errors) is insufficient, not
/// timed out. A single atypical ID taints an otherwise-valid window as
/// overt-spoofed; the mix is preserved in evidence.
pub fn classify_window(window: &HourlyWindow, profile: &PatternProfile) -> Verdict {
    let mut verdict = Verdict::new(
        window.vp_id.clone(),
        window.letter,
        window.window_start,
        Classification::Insufficient,
    );

    if window.dns.is_empty() {
        verdict.evidence.insufficient_reason = Some(InsufficientReason::NoDnsObservations);
        return verdict;
    }

    let n_answered = window.n_answered();
    let n_timeout = window.n_timeout();
    if n_answered == 0 {
        if n_timeout > 0 {
            verdict.classification = Classification::Timeout;
        } else {
            // error outcomes count as neither answered nor timed out
            verdict.evidence.insufficient_reason = Some(InsufficientReason::OnlyErrors);
        }
        return verdict;
    }

    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for obs in window.answered_dns() {
        let id = obs.server_id.as_deref().unwrap_or_default();
        *counts.entry(id).or_insert(0) += 1;
    }
    let mut first_unmatched: Option<String> = None;
    // first in observation (timestamp) order, for stable evidence
    for obs in window.answered_dns() {
        let id = obs.server_id.as_deref().unwrap_or_default();
        if !profile.matches(window.letter, id) {
            first_unmatched = Some(id.to_owned());
            break;
        }
    }
    let observed: Vec<ObservedId> = counts
        .into_iter()
        .map(|(id, count)| ObservedId {
            matched: profile.matches(window.letter, id),
            id: id.to_owned(),
            count,
        })
        .collect();
    let any_unmatched = observed.iter().any(|o| !o.matched);
    let evidence = OvertEvidence {
        observed,
        first_unmatched,
    };

    verdict.classification = if any_unmatched {
        Classification::OvertSpoofed
    } else {
        Classification::Valid
    };
    verdict.evidence.overt = Some(evidence);
    verdict
}

/// How many of one VP's letters were overtly spoofed in one sampled hour.
pub fn letters_spoofed_per_vp(verdicts: &[Verdict]) -> usize {
    debug_assert!(
        verdicts
            .windows(2)
            .all(|p| p[0].vp_id == p[1].vp_id && p[0].window_start == p[1].window_start),
        "verdicts must share vp and hour"
    );
    verdicts
        .iter()
        .filter(|v| v.classification == Classification::OvertSpoofed)
        .count()
}
