//! Population-level analyses over verdicts: spoof fractions per epoch,
//! trends, geography, per-VP letter counts, mechanism shares, and the latency
//! effect of spoofing.
//!
//! The unit of aggregation is the VP at one sampled hour. A VP is spoofed at
//! an epoch when at least one letter was overtly spoofed; covertly delayed
//! windows count as valid everywhere.

use std::collections::{BTreeMap, BTreeSet};

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::KnownSites;
use crate::model::{Classification, Letter, Mechanism, VantagePoint, Verdict, VpId};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("cohort is empty")]
    EmptyCohort,
}

/// UTC date of an epoch's hour start, e.g. "2020-05-03".
pub fn epoch_date(window_start: i64) -> String {
    DateTime::from_timestamp(window_start, 0)
        .map(|dt| dt.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| window_start.to_string())
}

/// How one VP fared across all letters in one sampled hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpClass {
    Spoofed,
    Valid { delayed: bool },
    Timeout,
    Insufficient,
}

#[derive(Debug, Clone)]
pub struct VpRollup {
    pub class: VpClass,
    pub letters_spoofed: u32,
    /// Any spoofed letter classified as rogue anycast?
    pub any_anycast: bool,
}

/// Rolls per-letter verdicts up to per-VP outcomes for one hour.
///
/// Precedence: any overtly spoofed letter makes the VP spoofed; otherwise any
/// answered letter makes it valid (delayed when some letter was covertly
/// delayed); otherwise any timed-out letter makes it timed out; VPs with only
/// insufficient windows are set aside.
pub fn rollup_vps(verdicts: &[Verdict]) -> BTreeMap<VpId, VpRollup> {
    let mut out: BTreeMap<VpId, VpRollup> = BTreeMap::new();
    for v in verdicts {
        let entry = out.entry(v.vp_id.clone()).or_insert(VpRollup {
            class: VpClass::Insufficient,
            letters_spoofed: 0,
            any_anycast: false,
        });
        match v.classification {
            Classification::OvertSpoofed => {
                entry.class = VpClass::Spoofed;
                entry.letters_spoofed += 1;
                if v.mechanism == Some(Mechanism::Anycast) {
                    entry.any_anycast = true;
                }
            }
            Classification::Valid | Classification::CovertDelayed => {
                let delayed_here = v.classification == Classification::CovertDelayed;
                entry.class = match entry.class {
                    VpClass::Spoofed => VpClass::Spoofed,
                    VpClass::Valid { delayed } => VpClass::Valid {
                        delayed: delayed || delayed_here,
                    },
                    _ => VpClass::Valid {
                        delayed: delayed_here,
                    },
                };
            }
            Classification::Timeout => {
                if matches!(entry.class, VpClass::Insufficient) {
                    entry.class = VpClass::Timeout;
                }
            }
            Classification::Insufficient => {}
        }
    }
    out
}

/// Table of VP counts for one sampled hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub date: String,
    pub window_start: i64,
    pub n_active_vps: u32,
    pub n_timeout: u32,
    pub n_answered: u32,
    pub n_valid: u32,
    pub n_covert_delayed: u32,
    pub n_spoofed: u32,
    pub n_insufficient: u32,
    pub fraction_timeout: f64,
    pub fraction_spoofed: f64,
    pub fraction_covert_delayed: f64,
    pub per_letter_spoofed: BTreeMap<Letter, u32>,
}

/// Counts one hour's verdicts into the summary table. Identities hold by
/// construction: answered = valid + spoofed, active = answered + timeout,
/// delayed VPs counted inside valid.
pub fn epoch_summary(window_start: i64, verdicts: &[Verdict]) -> EpochSummary {
    let rollup = rollup_vps(verdicts);
    let mut n_timeout = 0u32;
    let mut n_valid = 0u32;
    let mut n_delayed = 0u32;
    let mut n_spoofed = 0u32;
    let mut n_insufficient = 0u32;
    for r in rollup.values() {
        match r.class {
            VpClass::Spoofed => n_spoofed += 1,
            VpClass::Valid { delayed } => {
                n_valid += 1;
                if delayed {
                    n_delayed += 1;
                }
            }
            VpClass::Timeout => n_timeout += 1,
            VpClass::Insufficient => n_insufficient += 1,
        }
    }
    let n_answered = n_valid + n_spoofed;
    let n_active = n_answered + n_timeout;

    let mut per_letter_spoofed: BTreeMap<Letter, u32> = BTreeMap::new();
    for v in verdicts {
        if v.classification == Classification::OvertSpoofed {
            *per_letter_spoofed.entry(v.letter).or_insert(0) += 1;
        }
    }

    let frac = |n: u32| {
        if n_active > 0 {
            n as f64 / n_active as f64
        } else {
            0.0
        }
    };
    EpochSummary {
        date: epoch_date(window_start),
        window_start,
        n_active_vps: n_active,
        n_timeout,
        n_answered,
        n_valid,
        n_covert_delayed: n_delayed,
        n_spoofed,
        n_insufficient,
        fraction_timeout: frac(n_timeout),
        fraction_spoofed: frac(n_spoofed),
        fraction_covert_delayed: frac(n_delayed),
        per_letter_spoofed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub date: String,
    pub window_start: i64,
    pub fraction_spoofed: f64,
    /// Per-letter spoofed fraction over the same active denominator.
    pub per_letter: BTreeMap<Letter, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub rows: Vec<TrendRow>,
}

/// Spoofed fraction over time, overall and per letter, from epoch summaries
/// in date order.
pub fn trend(epochs: &[EpochSummary]) -> TrendSeries {
    let mut rows: Vec<TrendRow> = epochs
        .iter()
        .map(|e| {
            let denom = e.n_active_vps.max(1) as f64;
            TrendRow {
                date: e.date.clone(),
                window_start: e.window_start,
                fraction_spoofed: e.fraction_spoofed,
                per_letter: Letter::ALL
                    .iter()
                    .map(|&l| {
                        (
                            l,
                            e.per_letter_spoofed.get(&l).copied().unwrap_or(0) as f64 / denom,
                        )
                    })
                    .collect(),
            }
        })
        .collect();
    rows.sort_by_key(|r| r.window_start);
    TrendSeries { rows }
}

/// The `n` VPs most frequently present across a series of epochs, tie-broken
/// by VP id so the cohort is stable.
pub fn choose_cohort(epochs: &[(i64, Vec<Verdict>)], n: usize) -> BTreeSet<VpId> {
    let mut presence: BTreeMap<VpId, u32> = BTreeMap::new();
    for (_, verdicts) in epochs {
        let mut seen = BTreeSet::new();
        for v in verdicts {
            if seen.insert(v.vp_id.clone()) {
                *presence.entry(v.vp_id.clone()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(VpId, u32)> = presence.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(vp, _)| vp).collect()
}

/// The trend restricted to a fixed cohort of VPs, so growth in the platform's
/// population cannot masquerade as a trend.
pub fn cohort_trend(
    epochs: &[(i64, Vec<Verdict>)],
    cohort: &BTreeSet<VpId>,
) -> Result<TrendSeries, AggregateError> {
    if cohort.is_empty() {
        return Err(AggregateError::EmptyCohort);
    }
    let summaries: Vec<EpochSummary> = epochs
        .iter()
        .map(|(start, verdicts)| {
            let restricted: Vec<Verdict> = verdicts
                .iter()
                .filter(|v| cohort.contains(&v.vp_id))
                .cloned()
                .collect();
            epoch_summary(*start, &restricted)
        })
        .collect();
    Ok(trend(&summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryRow {
    pub country: String,
    pub spoofed: u32,
    pub active: u32,
    pub fraction: f64,
    /// Fewer active VPs than the threshold: reported but excluded from the
    /// ranking.
    pub undersampled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountryReport {
    /// Ranked rows first (fraction descending), undersampled rows after.
    pub rows: Vec<CountryRow>,
    pub unknown_country_spoofed: u32,
    pub unknown_country_active: u32,
}

/// Per-country spoofed fractions for one epoch. VPs without an index entry
/// land in the unknown-country residual so the spoofed counts still partition
/// the epoch total.
pub fn country_fractions(
    verdicts: &[Verdict],
    vp_index: &BTreeMap<VpId, VantagePoint>,
    min_vps: u32,
) -> CountryReport {
    let rollup = rollup_vps(verdicts);
    let mut per_country: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    let mut unknown = (0u32, 0u32);
    for (vp_id, r) in &rollup {
        let counts = match vp_index.get(vp_id) {
            Some(vp) => per_country.entry(vp.country.clone()).or_insert((0, 0)),
            None => &mut unknown,
        };
        match r.class {
            VpClass::Spoofed => {
                counts.0 += 1;
                counts.1 += 1;
            }
            VpClass::Valid { .. } | VpClass::Timeout => counts.1 += 1,
            VpClass::Insufficient => {}
        }
    }
    let mut rows: Vec<CountryRow> = per_country
        .into_iter()
        .map(|(country, (spoofed, active))| CountryRow {
            country,
            spoofed,
            active,
            fraction: if active > 0 {
                spoofed as f64 / active as f64
            } else {
                0.0
            },
            undersampled: active < min_vps,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.undersampled
            .cmp(&b.undersampled)
            .then(b.fraction.total_cmp(&a.fraction))
            .then_with(|| a.country.cmp(&b.country))
    });
    CountryReport {
        rows,
        unknown_country_spoofed: unknown.0,
        unknown_country_active: unknown.1,
    }
}

/// Cumulative distribution over 1..=13 of how many letters each spoofed VP
/// saw spoofed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LetterCountCdf {
    /// (letter count, cumulative fraction of spoofed VPs).
    pub points: Vec<(u32, f64)>,
    pub n_spoofed_vps: u32,
}

pub fn letter_count_cdf(verdicts: &[Verdict]) -> LetterCountCdf {
    let rollup = rollup_vps(verdicts);
    let counts: Vec<u32> = rollup
        .values()
        .filter(|r| matches!(r.class, VpClass::Spoofed))
        .map(|r| r.letters_spoofed)
        .collect();
    let n = counts.len() as u32;
    let mut points = Vec::with_capacity(13);
    let mut cum = 0u32;
    for k in 1..=13u32 {
        cum += counts.iter().filter(|&&c| c == k).count() as u32;
        points.push((k, if n > 0 { cum as f64 / n as f64 } else { 0.0 }));
    }
    LetterCountCdf {
        points,
        n_spoofed_vps: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismRow {
    pub date: String,
    pub window_start: i64,
    pub anycast: u32,
    pub non_anycast: u32,
    pub non_anycast_share: f64,
}

/// Spoofed-VP counts per mechanism over time. A VP counts as anycast-spoofed
/// when any of its spoofed letters got the anycast call.
pub fn mechanism_trend(epochs: &[(i64, Vec<Verdict>)]) -> Vec<MechanismRow> {
    let mut rows: Vec<MechanismRow> = epochs
        .iter()
        .map(|(start, verdicts)| {
            let rollup = rollup_vps(verdicts);
            let mut anycast = 0u32;
            let mut non_anycast = 0u32;
            for r in rollup.values() {
                if matches!(r.class, VpClass::Spoofed) {
                    if r.any_anycast {
                        anycast += 1;
                    } else {
                        non_anycast += 1;
                    }
                }
            }
            let total = anycast + non_anycast;
            MechanismRow {
                date: epoch_date(*start),
                window_start: *start,
                anycast,
                non_anycast,
                non_anycast_share: if total > 0 {
                    non_anycast as f64 / total as f64
                } else {
                    0.0
                },
            }
        })
        .filter(|r| r.anycast + r.non_anycast > 0)
        .collect();
    rows.sort_by_key(|r| r.window_start);
    rows
}

/// Per-letter distribution of ping-minus-DNS medians over spoofed windows:
/// positive values mean the spoofed answer beat the authentic ping baseline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub per_letter: BTreeMap<Letter, Vec<f64>>,
    /// Spoofed windows skipped for lack of latency stats (no ping baseline).
    pub excluded: u32,
}

impl ImprovementReport {
    /// Fraction of values at or below zero for one letter (spoofing did not
    /// help), when any values exist.
    pub fn fraction_not_faster(&self, letter: Letter) -> Option<f64> {
        let values = self.per_letter.get(&letter)?;
        if values.is_empty() {
            return None;
        }
        Some(values.iter().filter(|&&v| v <= 0.0).count() as f64 / values.len() as f64)
    }

    pub fn all_values(&self) -> Vec<f64> {
        self.per_letter.values().flatten().copied().collect()
    }
}

pub fn latency_improvement(verdicts: &[Verdict], sites: &KnownSites) -> ImprovementReport {
    let mut report = ImprovementReport::default();
    for v in verdicts {
        if v.classification != Classification::OvertSpoofed {
            continue;
        }
        if !sites.icmp_responsive(v.letter) {
            report.excluded += 1;
            continue;
        }
        match v.evidence.latency {
            Some(stats) => {
                report
                    .per_letter
                    .entry(v.letter)
                    .or_default()
                    .push(stats.median_ping - stats.median_dns);
            }
            None => report.excluded += 1,
        }
    }
    for values in report.per_letter.values_mut() {
        values.sort_by(f64::total_cmp);
    }
    report
}

// ---------------------------------------------------------------------------
// report writers (stable column names; see docs/formats.md)

pub fn write_summary_json(epochs: &[EpochSummary]) -> String {
    serde_json::to_string_pretty(epochs).expect("summary serialization cannot fail")
}

pub fn write_trend_csv(series: &TrendSeries) -> String {
    let mut out = String::from("date,window_start,fraction_spoofed");
    for l in Letter::ALL {
        out.push_str(&format!(",frac_{l}"));
    }
    out.push('\n');
    for row in &series.rows {
        out.push_str(&format!(
            "{},{},{}",
            row.date, row.window_start, row.fraction_spoofed
        ));
        for l in Letter::ALL {
            out.push_str(&format!(
                ",{}",
                row.per_letter.get(&l).copied().unwrap_or(0.0)
            ));
        }
        out.push('\n');
    }
    out
}

pub fn write_countries_csv(report: &CountryReport) -> String {
    let mut out = String::from("country,spoofed,active,fraction,undersampled\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.country, row.spoofed, row.active, row.fraction, row.undersampled
        ));
    }
    out.push_str(&format!(
        "??,{},{},,true\n",
        report.unknown_country_spoofed, report.unknown_country_active
    ));
    out
}

pub fn write_letter_cdf_csv(cdf: &LetterCountCdf) -> String {
    let mut out = String::from("letters_spoofed,cum_fraction\n");
    for (k, f) in &cdf.points {
        out.push_str(&format!("{k},{f}\n"));
    }
    out
}

pub fn write_mechanism_csv(rows: &[MechanismRow]) -> String {
    let mut out = String::from("date,window_start,anycast,non_anycast,non_anycast_share\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.date, r.window_start, r.anycast, r.non_anycast, r.non_anycast_share
        ));
    }
    out
}

pub fn write_improvement_csv(report: &ImprovementReport) -> String {
    let mut out = String::from("letter,improvement_ms,cum_fraction\n");
    for (letter, values) in &report.per_letter {
        let n = values.len() as f64;
        for (i, v) in values.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", letter, v, (i + 1) as f64 / n));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vp(n: u32) -> VpId {
        VpId::new(format!("vp{n:05}"))
    }

    fn verdict(n: u32, letter: Letter, class: Classification) -> Verdict {
        Verdict::new(vp(n), letter, 0, class)
    }

    #[test]
    fn summary_counts_and_identities() {
        let mut verdicts = Vec::new();
        // 3 valid, 1 delayed (counts as valid), 1 spoofed, 1 timeout, 1 insufficient
        for i in 0..3 {
            verdicts.push(verdict(i, Letter::A, Classification::Valid));
        }
        verdicts.push(verdict(3, Letter::A, Classification::CovertDelayed));
        verdicts.push(verdict(4, Letter::A, Classification::OvertSpoofed));
        verdicts.push(verdict(5, Letter::A, Classification::Timeout));
        verdicts.push(verdict(6, Letter::A, Classification::Insufficient));

        let s = epoch_summary(0, &verdicts);
        assert_eq!(s.n_active_vps, 6);
        assert_eq!(s.n_timeout, 1);
        assert_eq!(s.n_answered, 5);
        assert_eq!(s.n_valid, 4);
        assert_eq!(s.n_covert_delayed, 1);
        assert_eq!(s.n_spoofed, 1);
        assert_eq!(s.n_insufficient, 1);
        assert_eq!(s.n_answered, s.n_valid + s.n_spoofed);
        assert_eq!(s.n_active_vps, s.n_answered + s.n_timeout);
    }

    #[test]
    fn spoofed_wins_over_valid_and_timeout() {
        let verdicts = vec![
            verdict(0, Letter::A, Classification::Valid),
            verdict(0, Letter::B, Classification::OvertSpoofed),
            verdict(0, Letter::C, Classification::Timeout),
        ];
        let s = epoch_summary(0, &verdicts);
        assert_eq!(s.n_spoofed, 1);
        assert_eq!(s.n_active_vps, 1);
    }

    #[test]
    fn mixed_timeout_and_valid_is_answered() {
        let verdicts = vec![
            verdict(0, Letter::A, Classification::Timeout),
            verdict(0, Letter::B, Classification::Valid),
        ];
        let s = epoch_summary(0, &verdicts);
        assert_eq!(s.n_timeout, 0);
        assert_eq!(s.n_valid, 1);
    }

    #[test]
    fn all_valid_has_zero_fraction() {
        let verdicts: Vec<Verdict> = (0..50)
            .map(|i| verdict(i, Letter::A, Classification::Valid))
            .collect();
        let s = epoch_summary(0, &verdicts);
        assert_eq!(s.fraction_spoofed, 0.0);
    }

    #[test]
    fn cdf_is_monotone_and_terminal() {
        let mut verdicts = Vec::new();
        // 83% of spoofed VPs spoof all 13 letters, 17% only one
        for i in 0..83 {
            for l in Letter::ALL {
                verdicts.push(verdict(i, l, Classification::OvertSpoofed));
            }
        }
        for i in 83..100 {
            verdicts.push(verdict(i, Letter::A, Classification::OvertSpoofed));
        }
        let cdf = letter_count_cdf(&verdicts);
        assert_eq!(cdf.n_spoofed_vps, 100);
        for pair in cdf.points.windows(2) {
            assert!(pair[1].1 >= pair[0].1);
        }
        assert_eq!(cdf.points.last().unwrap().1, 1.0);
        // mass below 13 letters is exactly the single-letter spoofers
        assert!((cdf.points[11].1 - 0.17).abs() < 1e-12);
        assert!((cdf.points[0].1 - 0.17).abs() < 1e-12);
    }

    #[test]
    fn single_letter_spoofers_reach_one_at_k1() {
        let verdicts: Vec<Verdict> = (0..10)
            .map(|i| verdict(i, Letter::D, Classification::OvertSpoofed))
            .collect();
        let cdf = letter_count_cdf(&verdicts);
        assert_eq!(cdf.points[0], (1, 1.0));
    }

    #[test]
    fn flat_series_for_constant_population() {
        let epochs: Vec<EpochSummary> = (0..4)
            .map(|day| {
                let verdicts: Vec<Verdict> = (0..100)
                    .map(|i| {
                        let class = if i < 5 {
                            Classification::OvertSpoofed
                        } else {
                            Classification::Valid
                        };
                        Verdict::new(vp(i), Letter::A, day * 86_400, class)
                    })
                    .collect();
                epoch_summary(day * 86_400, &verdicts)
            })
            .collect();
        let series = trend(&epochs);
        assert!(series.rows.iter().all(|r| r.fraction_spoofed == 0.05));
    }

    #[test]
    fn cohort_equal_to_population_matches_trend() {
        let epochs: Vec<(i64, Vec<Verdict>)> = (0..3)
            .map(|day| {
                let start = day * 86_400;
                let verdicts: Vec<Verdict> = (0..40)
                    .map(|i| {
                        let class = if i < 2 {
                            Classification::OvertSpoofed
                        } else {
                            Classification::Valid
                        };
                        Verdict::new(vp(i), Letter::A, start, class)
                    })
                    .collect();
                (start, verdicts)
            })
            .collect();
        let summaries: Vec<EpochSummary> =
            epochs.iter().map(|(s, v)| epoch_summary(*s, v)).collect();
        let full = trend(&summaries);
        let cohort = choose_cohort(&epochs, 40);
        let restricted = cohort_trend(&epochs, &cohort).unwrap();
        assert_eq!(full, restricted);

        assert!(matches!(
            cohort_trend(&epochs, &BTreeSet::new()),
            Err(AggregateError::EmptyCohort)
        ));
    }

    #[test]
    fn country_fractions_partition_and_flag() {
        let mut vp_index = BTreeMap::new();
        let mut verdicts = Vec::new();
        let mut add = |i: u32, country: &str, class: Classification| {
            let id = vp(i);
            vp_index.insert(
                id.clone(),
                VantagePoint {
                    vp_id: id.clone(),
                    public_prefix: "10.0.0.0/24".parse().unwrap(),
                    asn: 1,
                    country: country.to_owned(),
                    coordinates: None,
                },
            );
            verdicts.push(Verdict::new(id, Letter::A, 0, class));
        };
        // ID: 23/87 spoofed; small country: 1 spoof among 9 active
        for i in 0..87 {
            add(
                i,
                "ID",
                if i < 23 {
                    Classification::OvertSpoofed
                } else {
                    Classification::Valid
                },
            );
        }
        for i in 200..398 {
            add(
                i,
                "IR",
                if i < 248 {
                    Classification::OvertSpoofed
                } else {
                    Classification::Valid
                },
            );
        }
        for i in 100..109 {
            add(
                i,
                "TZ",
                if i == 100 {
                    Classification::OvertSpoofed
                } else {
                    Classification::Valid
                },
            );
        }
        // one spoofed VP missing from the index
        verdicts.push(Verdict::new(
            VpId::from("ghost"),
            Letter::A,
            0,
            Classification::OvertSpoofed,
        ));

        let report = country_fractions(&verdicts, &vp_index, 10);
        let id_row = report.rows.iter().find(|r| r.country == "ID").unwrap();
        assert_eq!((id_row.spoofed, id_row.active), (23, 87));
        assert_eq!((id_row.fraction * 100.0).round() as u32, 26);
        assert!(!id_row.undersampled);

        let ir_row = report.rows.iter().find(|r| r.country == "IR").unwrap();
        assert_eq!((ir_row.spoofed, ir_row.active), (48, 198));
        assert_eq!((ir_row.fraction * 100.0).round() as u32, 24);
        // ranking is by fraction: 26% before 24%
        let pos = |c: &str| report.rows.iter().position(|r| r.country == c).unwrap();
        assert!(pos("ID") < pos("IR"));

        let tz_row = report.rows.iter().find(|r| r.country == "TZ").unwrap();
        assert!(tz_row.undersampled);

        let summary = epoch_summary(0, &verdicts);
        let total: u32 =
            report.rows.iter().map(|r| r.spoofed).sum::<u32>() + report.unknown_country_spoofed;
        assert_eq!(total, summary.n_spoofed);
        // undersampled rows sort after ranked ones
        assert!(report.rows.iter().position(|r| r.undersampled).unwrap() > 0);
    }

    #[test]
    fn mechanism_trend_counts_vps() {
        let mut verdicts = Vec::new();
        for i in 0..10 {
            let mut v = verdict(i, Letter::A, Classification::OvertSpoofed);
            v.mechanism = Some(if i == 0 {
                Mechanism::Anycast
            } else {
                Mechanism::NonAnycast
            });
            verdicts.push(v);
        }
        let rows = mechanism_trend(&[(0, verdicts)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].anycast, 1);
        assert_eq!(rows[0].non_anycast, 9);
        assert_eq!(rows[0].non_anycast_share, 0.9);

        assert!(
            mechanism_trend(&[(0, vec![verdict(0, Letter::A, Classification::Valid)])]).is_empty()
        );
    }
}
