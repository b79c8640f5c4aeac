//! Labeled scenario generator: synthesizes client-side observation streams
//! and the matching authoritative-side log under configurable adversary
//! models, with per-VP ground truth for scoring the detectors.
//!
//! Determinism is part of the contract: the same seed and config produce
//! byte-identical output. Every VP derives its own RNG stream from the master
//! seed, so generation parallelizes without ordering effects.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect_covert::CovertConfig;
use crate::ingest::{KnownSites, LetterEntry, PatternProfile};
use crate::model::{
    Classification, DnsObservation, Letter, Observation, PingObservation, Prefix24, Schedule,
    TracerouteHop, TracerouteObservation, VantagePoint, Verdict, VpId,
};
use crate::validate::{ServerLogRecord, QNAME, QTYPE};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    Honest,
    OvertProxy,
    OvertInjector,
    AnycastHijacker,
    CovertDelayer,
    Flapper,
}

/// One adversary (or plain-VP) behavior model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryModel {
    pub kind: AdversaryKind,
    /// Server ID spoofed answers carry; must not match any legitimate
    /// pattern. Unused (and required empty) for honest VPs and delayers.
    #[serde(default)]
    pub spoof_server_id: String,
    /// Latency shift a covert delayer adds to DNS; negative values model a
    /// middlebox whose DNS path is faster than its ICMP path.
    #[serde(default)]
    pub added_delay_ms: f64,
    /// Per-VP delay values cycled through delayer VPs in assignment order;
    /// overrides `added_delay_ms` when non-empty.
    #[serde(default)]
    pub added_delay_choices: Vec<f64>,
    /// Letters the adversary touches; empty means every letter in the
    /// topology.
    #[serde(default)]
    pub affected_letters: BTreeSet<Letter>,
    /// Whether the original query is dropped (never reaches the server).
    #[serde(default)]
    pub drop_query: bool,
    /// Spoofed-answer RTT range; spoofers sit near the VP.
    #[serde(default)]
    pub spoof_rtt_ms: Option<(f64, f64)>,
    /// Flapper only: per-query spoof probability; 0 selects the
    /// deterministic spoof/authentic/timeout cycle.
    #[serde(default)]
    pub flap_spoof_prob: f64,
    /// Per-query probability the query is lost before the server.
    #[serde(default)]
    pub query_loss: f64,
    /// Per-query probability the reply is lost on the way back (the query
    /// still reaches the server and is logged).
    #[serde(default)]
    pub reply_loss: f64,
    /// The VP's indexed prefix is outdated: its queries arrive at the server
    /// from a different /24, so honest traffic fails to match.
    #[serde(default)]
    pub stale_metadata: bool,
}

impl AdversaryModel {
    pub fn honest() -> Self {
        AdversaryModel {
            kind: AdversaryKind::Honest,
            spoof_server_id: String::new(),
            added_delay_ms: 0.0,
            added_delay_choices: Vec::new(),
            affected_letters: BTreeSet::new(),
            drop_query: false,
            spoof_rtt_ms: None,
            flap_spoof_prob: 0.0,
            query_loss: 0.0,
            reply_loss: 0.0,
            stale_metadata: false,
        }
    }

    pub fn check(&self) -> Result<(), SimError> {
        let err = |msg: &str| Err(SimError::InvalidConfig(msg.to_owned()));
        match self.kind {
            AdversaryKind::OvertProxy if !self.drop_query => {
                return err("a proxy drops the original query: drop_query must be true");
            }
            AdversaryKind::OvertInjector if self.drop_query => {
                return err("an injector lets the query through: drop_query must be false");
            }
            AdversaryKind::CovertDelayer => {
                if self.drop_query {
                    return err("a covert delayer forwards the query: drop_query must be false");
                }
                if !self.spoof_server_id.is_empty() {
                    return err("a covert delayer answers with the legitimate server ID");
                }
            }
            _ => {}
        }
        if matches!(
            self.kind,
            AdversaryKind::OvertProxy
                | AdversaryKind::OvertInjector
                | AdversaryKind::AnycastHijacker
                | AdversaryKind::Flapper
        ) && self.spoof_server_id.is_empty()
        {
            return err("spoofing models need a spoof_server_id");
        }
        for p in [self.query_loss, self.reply_loss, self.flap_spoof_prob] {
            if !(0.0..=1.0).contains(&p) {
                return err("probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub model: AdversaryModel,
    #[serde(default)]
    pub probability: Option<f64>,
    #[serde(default)]
    pub count: Option<u32>,
}

/// Synthetic anycast deployment: per-letter site counts; sites get generated
/// server IDs, one penultimate-hop router each, and a per-letter service
/// address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    /// Site count per letter; the keys define which letters exist in the
    /// scenario.
    pub sites: BTreeMap<Letter, u32>,
    /// Letters that never answer ICMP.
    #[serde(default)]
    pub icmp_dark: BTreeSet<Letter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub dns: f64,
    #[serde(default)]
    pub ping: f64,
    #[serde(default)]
    pub traceroute: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            dns: 0.0,
            ping: 0.0,
            traceroute: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_vps: u32,
    /// Sampled hour starts (seconds, UTC).
    pub schedule: Vec<i64>,
    /// Symmetric uniform jitter with this MAD (half-width = 2x MAD).
    #[serde(default = "default_jitter")]
    pub jitter_mad_ms: f64,
    /// Base RTT range toward authentic sites, per (vp, letter).
    #[serde(default = "default_base_rtt")]
    pub base_rtt_ms: (f64, f64),
    /// Per-letter base RTT overrides (letters with bigger footprints sit
    /// closer to VPs).
    #[serde(default)]
    pub base_rtt_letter: BTreeMap<Letter, (f64, f64)>,
    #[serde(default)]
    pub loss: LossConfig,
    pub mix: Vec<MixEntry>,
    pub topology: TopologySpec,
    #[serde(default = "default_countries")]
    pub countries: Vec<String>,
    #[serde(default = "default_n_asns")]
    pub n_asns: u32,
}

fn default_jitter() -> f64 {
    1.5
}

fn default_base_rtt() -> (f64, f64) {
    (10.0, 80.0)
}

fn default_countries() -> Vec<String> {
    [
        "US", "DE", "FR", "GB", "NL", "ID", "IR", "RU", "BR", "IN", "JP", "UA", "TR", "EG",
    ]
    .iter()
    .map(|s| (*s).to_owned())
    .collect()
}

fn default_n_asns() -> u32 {
    400
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn check(&self) -> Result<(), SimError> {
        let err = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.n_vps == 0 {
            return err("n_vps must be positive".into());
        }
        if self.topology.sites.is_empty() {
            return err("topology needs at least one letter".into());
        }
        if self.topology.sites.values().any(|&n| n == 0) {
            return err("every letter needs at least one site".into());
        }
        Schedule::new(self.schedule.clone()).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.jitter_mad_ms < 0.0 {
            return err("jitter_mad_ms must be non-negative".into());
        }
        if self.mix.is_empty() {
            return err("mix must not be empty".into());
        }
        for entry in &self.mix {
            entry.model.check()?;
            if entry.probability.is_some() == entry.count.is_some() {
                return err("each mix entry needs exactly one of probability or count".into());
            }
        }
        let with_counts = self.mix.iter().filter(|e| e.count.is_some()).count();
        if with_counts > 0 && with_counts < self.mix.len() {
            return err("mix entries must all use counts or all use probabilities".into());
        }
        if with_counts == self.mix.len() {
            let total: u32 = self.mix.iter().map(|e| e.count.unwrap()).sum();
            if total > self.n_vps {
                return err(format!(
                    "mix counts sum to {total}, more than n_vps = {}",
                    self.n_vps
                ));
            }
        } else {
            let total: f64 = self.mix.iter().map(|e| e.probability.unwrap()).sum();
            if (total - 1.0).abs() > 1e-9 {
                return err(format!("mix probabilities sum to {total}, expected 1"));
            }
        }
        Ok(())
    }

    fn letters(&self) -> Vec<Letter> {
        self.topology.sites.keys().copied().collect()
    }

    fn base_range(&self, letter: Letter) -> (f64, f64) {
        self.base_rtt_letter
            .get(&letter)
            .copied()
            .unwrap_or(self.base_rtt_ms)
    }
}

#[derive(Debug, Clone)]
pub struct SimSite {
    pub server_id: String,
    pub site_code: String,
    pub penultimate_hop: Ipv4Addr,
}

#[derive(Debug, Clone)]
pub struct SimTopology {
    pub letters: BTreeMap<Letter, (Ipv4Addr, Vec<SimSite>)>,
    pub icmp_dark: BTreeSet<Letter>,
}

const CITY_CODES: [&str; 16] = [
    "lax", "lon", "ams", "fra", "nrt", "syd", "gru", "jnb", "sin", "dfw", "iad", "cdg", "arn",
    "yyz", "bom", "mia",
];

/// Expands the topology spec into concrete sites. Server IDs follow a
/// per-letter convention (`b1-lax1`), so the matching profile pattern is
/// derivable.
pub fn build_topology(spec: &TopologySpec) -> SimTopology {
    let mut letters = BTreeMap::new();
    for (&letter, &n_sites) in &spec.sites {
        let idx = letter as u8;
        let service = Ipv4Addr::new(198, 51, 100 + idx, 53);
        let sites: Vec<SimSite> = (0..n_sites)
            .map(|i| {
                let city = CITY_CODES[(i as usize) % CITY_CODES.len()];
                let copy = i as usize / CITY_CODES.len() + 1;
                SimSite {
                    server_id: format!(
                        "{}1-{}{}",
                        letter.as_char().to_ascii_lowercase(),
                        city,
                        copy
                    ),
                    site_code: city.to_owned(),
                    penultimate_hop: Ipv4Addr::new(203, 0, idx, (i + 1) as u8),
                }
            })
            .collect();
        letters.insert(letter, (service, sites));
    }
    SimTopology {
        letters,
        icmp_dark: spec.icmp_dark.clone(),
    }
}

impl SimTopology {
    /// Known-sites list matching this topology.
    pub fn known_sites(&self) -> KnownSites {
        let letters: BTreeMap<Letter, LetterEntry> = Letter::ALL
            .iter()
            .map(|&l| {
                let entry = match self.letters.get(&l) {
                    Some((service, sites)) => LetterEntry {
                        service_address: *service,
                        icmp_responsive: !self.icmp_dark.contains(&l),
                        sites: sites.iter().map(|s| s.site_code.clone()).collect(),
                        penultimate_hops: sites.iter().map(|s| s.penultimate_hop).collect(),
                    },
                    // letters outside the scenario still need entries
                    None => LetterEntry {
                        service_address: Ipv4Addr::new(198, 51, 100 + l as u8, 53),
                        icmp_responsive: !self.icmp_dark.contains(&l),
                        sites: BTreeSet::new(),
                        penultimate_hops: BTreeSet::new(),
                    },
                };
                (l, entry)
            })
            .collect();
        KnownSites::new("synthetic".to_owned(), letters).expect("all letters present")
    }

    /// Pattern profile accepting exactly this topology's ID convention.
    pub fn profile(&self) -> PatternProfile {
        let patterns: BTreeMap<Letter, Vec<String>> = Letter::ALL
            .iter()
            .map(|&l| {
                (
                    l,
                    vec![format!(
                        "{}[0-9]+-[a-z]{{3}}[0-9]+",
                        l.as_char().to_ascii_lowercase()
                    )],
                )
            })
            .collect();
        PatternProfile::new("synthetic".to_owned(), patterns).expect("patterns compile")
    }
}

/// Per-VP ground truth emitted next to the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub vp_id: VpId,
    pub kind: AdversaryKind,
    pub affected_letters: BTreeSet<Letter>,
    /// What a perfect detector should say per letter, given the model
    /// parameters.
    pub expected: BTreeMap<Letter, Classification>,
}

pub struct SimOutput {
    pub vps: Vec<VantagePoint>,
    pub observations: Vec<Observation>,
    pub server_log: Vec<ServerLogRecord>,
    pub truth: Vec<GroundTruth>,
    pub known_sites: KnownSites,
    pub profile: PatternProfile,
    pub schedule: Schedule,
}

struct VpPlan<'a> {
    index: u32,
    model: &'a AdversaryModel,
    /// Delay for this VP when the model cycles through choices.
    delay_ms: f64,
}

fn vp_rng(seed: u64, index: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64)
            .rotate_left(17),
    )
}

fn jitter(rng: &mut ChaCha8Rng, mad: f64) -> f64 {
    if mad == 0.0 {
        0.0
    } else {
        rng.random_range(-2.0 * mad..=2.0 * mad)
    }
}

/// RTTs are stored as decimal milliseconds at microsecond precision, like
/// the canonical record format; quantize and keep them positive.
fn positive(rtt: f64) -> f64 {
    (rtt.max(0.1) * 1000.0).round() / 1000.0
}

/// Generates the full scenario: observations, server log, VP index, ground
/// truth, and the matching known-sites list and pattern profile.
pub fn generate(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    config.check()?;
    let topology = build_topology(&config.topology);
    let profile = topology.profile();
    let known_sites = topology.known_sites();
    let schedule = Schedule::new(config.schedule.clone()).expect("checked");
    let letters = config.letters();

    // spoof IDs must be detectable as atypical, or the ground truth lies
    for entry in &config.mix {
        if entry.model.spoof_server_id.is_empty() {
            continue;
        }
        for &letter in &letters {
            if profile.matches(letter, &entry.model.spoof_server_id) {
                return Err(SimError::InvalidConfig(format!(
                    "spoof id {:?} matches the legitimate pattern for letter {letter}",
                    entry.model.spoof_server_id
                )));
            }
        }
    }

    let default_model = AdversaryModel::honest();
    let plans = assign_models(config, &default_model);

    let covert_defaults = CovertConfig::default();
    let per_vp: Vec<(
        VantagePoint,
        GroundTruth,
        Vec<Observation>,
        Vec<ServerLogRecord>,
    )> = plans
        .par_iter()
        .map(|plan| {
            generate_vp(
                config,
                &topology,
                &letters,
                &schedule,
                plan,
                &covert_defaults,
            )
        })
        .collect();

    let mut vps = Vec::with_capacity(per_vp.len());
    let mut observations = Vec::new();
    let mut server_log = Vec::new();
    let mut truth = Vec::with_capacity(per_vp.len());
    for (vp, gt, obs, log) in per_vp {
        vps.push(vp);
        observations.extend(obs);
        server_log.extend(log);
        truth.push(gt);
    }
    server_log.sort_by_key(|r| (r.timestamp, r.source_prefix, r.letter));

    Ok(SimOutput {
        vps,
        observations,
        server_log,
        truth,
        known_sites,
        profile,
        schedule,
    })
}

fn assign_models<'a>(
    config: &'a ScenarioConfig,
    default_model: &'a AdversaryModel,
) -> Vec<VpPlan<'a>> {
    let n = config.n_vps as usize;
    let counts_mode = config.mix.iter().all(|e| e.count.is_some());
    let mut model_of: Vec<Option<usize>> = vec![None; n];

    let mut assign_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_A551_0000_0001);
    if counts_mode {
        let mut slots: Vec<usize> = (0..n).collect();
        slots.shuffle(&mut assign_rng);
        let mut cursor = 0usize;
        for (mi, entry) in config.mix.iter().enumerate() {
            for _ in 0..entry.count.unwrap() {
                model_of[slots[cursor]] = Some(mi);
                cursor += 1;
            }
        }
        // remainder stays honest-by-default
    } else {
        for slot in model_of.iter_mut() {
            let mut draw: f64 = assign_rng.random_range(0.0..1.0);
            let mut chosen = config.mix.len() - 1;
            for (mi, entry) in config.mix.iter().enumerate() {
                let p = entry.probability.unwrap();
                if draw < p {
                    chosen = mi;
                    break;
                }
                draw -= p;
            }
            *slot = Some(chosen);
        }
    }

    let mut delay_counters: BTreeMap<usize, usize> = BTreeMap::new();
    model_of
        .into_iter()
        .enumerate()
        .map(|(i, mi)| {
            let model = match mi {
                Some(mi) => &config.mix[mi].model,
                None => default_model,
            };
            let delay_ms = if model.added_delay_choices.is_empty() {
                model.added_delay_ms
            } else {
                let k = delay_counters.entry(mi.unwrap_or(usize::MAX)).or_insert(0);
                let v = model.added_delay_choices[*k % model.added_delay_choices.len()];
                *k += 1;
                v
            };
            VpPlan {
                index: i as u32,
                model,
                delay_ms,
            }
        })
        .collect()
}

fn expected_classification(
    model: &AdversaryModel,
    affected: bool,
    icmp_responsive: bool,
    delay_ms: f64,
    base_range: (f64, f64),
    covert: &CovertConfig,
) -> Classification {
    if model.query_loss >= 1.0 || model.reply_loss >= 1.0 {
        return Classification::Timeout;
    }
    if !affected {
        return Classification::Valid;
    }
    match model.kind {
        AdversaryKind::Honest => Classification::Valid,
        AdversaryKind::OvertProxy
        | AdversaryKind::OvertInjector
        | AdversaryKind::AnycastHijacker
        | AdversaryKind::Flapper => Classification::OvertSpoofed,
        AdversaryKind::CovertDelayer => {
            if !icmp_responsive {
                return Classification::Valid;
            }
            // intent evaluated at the midpoint of the base range
            let base = (base_range.0 + base_range.1) / 2.0;
            let delta = delay_ms.abs();
            let min_median = base.min(base + delay_ms);
            let detectable = delta > covert.ratio * min_median && delta > covert.floor_ms;
            if detectable {
                Classification::CovertDelayed
            } else {
                Classification::Valid
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn generate_vp(
    config: &ScenarioConfig,
    topology: &SimTopology,
    letters: &[Letter],
    schedule: &Schedule,
    plan: &VpPlan<'_>,
    covert: &CovertConfig,
) -> (
    VantagePoint,
    GroundTruth,
    Vec<Observation>,
    Vec<ServerLogRecord>,
) {
    let i = plan.index;
    let model = plan.model;
    let mut rng = vp_rng(config.seed, i);

    let vp_id = VpId::new(format!("vp{i:05}"));
    let indexed_prefix = Prefix24::of(Ipv4Addr::new(10, (i >> 8) as u8, (i & 0xff) as u8, 1));
    let true_prefix = if model.stale_metadata {
        Prefix24::of(Ipv4Addr::new(
            172,
            16 + ((i >> 8) & 0x0f) as u8,
            (i & 0xff) as u8,
            1,
        ))
    } else {
        indexed_prefix
    };
    let country = config.countries[rng.random_range(0..config.countries.len())].clone();
    let asn = 64_496 + rng.random_range(0..config.n_asns);
    let vantage = VantagePoint {
        vp_id: vp_id.clone(),
        public_prefix: indexed_prefix,
        asn,
        country,
        coordinates: None,
    };

    let affected: BTreeSet<Letter> = if model.affected_letters.is_empty() {
        match model.kind {
            AdversaryKind::Honest => BTreeSet::new(),
            _ => letters.iter().copied().collect(),
        }
    } else {
        model.affected_letters.iter().copied().collect()
    };

    let spoof_range = model.spoof_rtt_ms.unwrap_or((1.0, 6.0));
    let spoof_base = rng.random_range(spoof_range.0..=spoof_range.1);

    let mut observations = Vec::new();
    let mut log = Vec::new();
    let mut expected = BTreeMap::new();

    for &letter in letters {
        let (service, sites) = &topology.letters[&letter];
        let site = &sites[rng.random_range(0..sites.len())];
        let (lo, hi) = config.base_range(letter);
        let base = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        let icmp_ok = !topology.icmp_dark.contains(&letter);
        let letter_affected = affected.contains(&letter);

        expected.insert(
            letter,
            expected_classification(
                model,
                letter_affected,
                icmp_ok,
                plan.delay_ms,
                config.base_range(letter),
                covert,
            ),
        );

        let mad = config.jitter_mad_ms;
        for &hour in schedule.starts() {
            // 15 DNS queries at the probing cadence
            for q in 0..15 {
                let ts = hour + q * 240;
                let lost_dns = rng.random_range(0.0..1.0) < config.loss.dns;
                let obs = dns_query(
                    model,
                    letter_affected,
                    q,
                    &vp_id,
                    letter,
                    ts,
                    site,
                    base,
                    spoof_base,
                    plan.delay_ms,
                    mad,
                    lost_dns,
                    true_prefix,
                    &mut rng,
                    &mut log,
                );
                observations.push(Observation::Dns(obs));
            }
            // 15 pings at the same cadence
            for q in 0..15 {
                let ts = hour + q * 240;
                let rtt = if !icmp_ok || rng.random_range(0.0..1.0) < config.loss.ping {
                    None
                } else if model.kind == AdversaryKind::AnycastHijacker && letter_affected {
                    Some(positive(spoof_base + jitter(&mut rng, mad)))
                } else {
                    Some(positive(base + jitter(&mut rng, mad)))
                };
                observations.push(Observation::Ping(PingObservation {
                    vp_id: vp_id.clone(),
                    letter,
                    timestamp: ts,
                    rtt_ms: rtt,
                }));
            }
            // 2 traceroutes per hour
            for t in 0..2 {
                let ts = hour + 30 + t * 1800;
                let lost = rng.random_range(0.0..1.0) < config.loss.traceroute;
                let rogue = model.kind == AdversaryKind::AnycastHijacker && letter_affected;
                let penult = if rogue {
                    Ipv4Addr::new(203, 100, letter as u8, (i % 200) as u8 + 1)
                } else {
                    site.penultimate_hop
                };
                let mut hops = vec![
                    TracerouteHop {
                        ttl: 1,
                        responder: Some(Ipv4Addr::new(10, 64, (i >> 8) as u8, (i & 0xff) as u8)),
                    },
                    TracerouteHop {
                        ttl: 2,
                        responder: Some(penult),
                    },
                    TracerouteHop {
                        ttl: 3,
                        responder: Some(*service),
                    },
                ];
                let reached = !lost;
                if lost {
                    hops.pop();
                }
                observations.push(Observation::Traceroute(TracerouteObservation {
                    vp_id: vp_id.clone(),
                    letter,
                    timestamp: ts,
                    hops,
                    reached,
                }));
            }
        }
    }

    let truth = GroundTruth {
        vp_id,
        kind: model.kind,
        affected_letters: affected,
        expected,
    };
    (vantage, truth, observations, log)
}

#[allow(clippy::too_many_arguments)]
fn dns_query(
    model: &AdversaryModel,
    letter_affected: bool,
    query_index: i64,
    vp_id: &VpId,
    letter: Letter,
    ts: i64,
    site: &SimSite,
    base: f64,
    spoof_base: f64,
    delay_ms: f64,
    mad: f64,
    lost: bool,
    true_prefix: Prefix24,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<ServerLogRecord>,
) -> DnsObservation {
    let log_record = |log: &mut Vec<ServerLogRecord>| {
        log.push(ServerLogRecord {
            timestamp: ts,
            source_prefix: true_prefix,
            query_type: QTYPE.to_owned(),
            qname: QNAME.to_owned(),
            letter,
        });
    };

    // platform-level query loss happens before anything else
    if lost {
        return DnsObservation::timeout(vp_id.clone(), letter, ts);
    }

    let behavior = if letter_affected {
        model.kind
    } else {
        AdversaryKind::Honest
    };
    match behavior {
        AdversaryKind::Honest | AdversaryKind::CovertDelayer => {
            if rng.random_range(0.0..1.0) < model.query_loss {
                return DnsObservation::timeout(vp_id.clone(), letter, ts);
            }
            log_record(log);
            if rng.random_range(0.0..1.0) < model.reply_loss {
                return DnsObservation::timeout(vp_id.clone(), letter, ts);
            }
            let delay = if behavior == AdversaryKind::CovertDelayer {
                delay_ms
            } else {
                0.0
            };
            DnsObservation::answered(
                vp_id.clone(),
                letter,
                ts,
                site.server_id.clone(),
                positive(base + delay + jitter(rng, mad)),
            )
        }
        AdversaryKind::OvertProxy | AdversaryKind::AnycastHijacker => DnsObservation::answered(
            vp_id.clone(),
            letter,
            ts,
            model.spoof_server_id.clone(),
            positive(spoof_base + jitter(rng, mad)),
        ),
        AdversaryKind::OvertInjector => {
            log_record(log);
            DnsObservation::answered(
                vp_id.clone(),
                letter,
                ts,
                model.spoof_server_id.clone(),
                positive(spoof_base + jitter(rng, mad)),
            )
        }
        AdversaryKind::Flapper => {
            let phase = if model.flap_spoof_prob > 0.0 {
                if rng.random_range(0.0..1.0) < model.flap_spoof_prob {
                    0
                } else {
                    1
                }
            } else {
                query_index % 3
            };
            match phase {
                0 => DnsObservation::answered(
                    vp_id.clone(),
                    letter,
                    ts,
                    model.spoof_server_id.clone(),
                    positive(spoof_base + jitter(rng, mad)),
                ),
                1 => {
                    log_record(log);
                    DnsObservation::answered(
                        vp_id.clone(),
                        letter,
                        ts,
                        site.server_id.clone(),
                        positive(base + jitter(rng, mad)),
                    )
                }
                _ => DnsObservation::timeout(vp_id.clone(), letter, ts),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// scoring against ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub expected: Classification,
    pub actual: Classification,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub support: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Per-(vp, letter, hour) confusion counts, expected vs actual.
    pub window_confusion: Vec<ConfusionCell>,
    pub per_class: BTreeMap<Classification, ClassScore>,
    /// VP-level spoof detection: a VP counts as truth-spoofed when any
    /// letter is expected overtly spoofed, detected when any letter verdict
    /// says so.
    pub vp_truth_spoofed: u32,
    pub vp_detected_spoofed: u32,
    pub vp_true_positives: u32,
    pub vp_false_positives: u32,
    pub spoof_recall: f64,
    pub spoof_precision: f64,
}

/// Exact confusion counts of verdicts against ground truth, plus VP-level
/// spoof recall and precision.
pub fn score(verdicts: &[Verdict], truth: &[GroundTruth]) -> ScoreReport {
    let mut actual: BTreeMap<(&VpId, Letter, i64), Classification> = BTreeMap::new();
    let mut hours: BTreeSet<i64> = BTreeSet::new();
    for v in verdicts {
        actual.insert((&v.vp_id, v.letter, v.window_start), v.classification);
        hours.insert(v.window_start);
    }

    let mut confusion: BTreeMap<(Classification, Classification), u32> = BTreeMap::new();
    let mut vp_truth_spoofed = 0u32;
    let mut vp_detected_and_truth = 0u32;
    let mut vp_detected = 0u32;
    let mut vp_false_positives = 0u32;

    for gt in truth {
        let mut truth_spoofed = false;
        let mut detected_spoofed = false;
        for &hour in &hours {
            for (&letter, &exp) in &gt.expected {
                let act = actual
                    .get(&(&gt.vp_id, letter, hour))
                    .copied()
                    .unwrap_or(Classification::Insufficient);
                *confusion.entry((exp, act)).or_insert(0) += 1;
                if exp == Classification::OvertSpoofed {
                    truth_spoofed = true;
                }
                if act == Classification::OvertSpoofed {
                    detected_spoofed = true;
                }
            }
        }
        if truth_spoofed {
            vp_truth_spoofed += 1;
        }
        if detected_spoofed {
            vp_detected += 1;
            if truth_spoofed {
                vp_detected_and_truth += 1;
            } else {
                vp_false_positives += 1;
            }
        }
    }

    let mut per_class: BTreeMap<Classification, ClassScore> = BTreeMap::new();
    let classes = [
        Classification::Valid,
        Classification::OvertSpoofed,
        Classification::CovertDelayed,
        Classification::Timeout,
        Classification::Insufficient,
    ];
    for c in classes {
        let support: u32 = confusion
            .iter()
            .filter(|((e, _), _)| *e == c)
            .map(|(_, n)| n)
            .sum();
        let hit = confusion.get(&(c, c)).copied().unwrap_or(0);
        let said: u32 = confusion
            .iter()
            .filter(|((_, a), _)| *a == c)
            .map(|(_, n)| n)
            .sum();
        per_class.insert(
            c,
            ClassScore {
                support,
                precision: (said > 0).then(|| hit as f64 / said as f64),
                recall: (support > 0).then(|| hit as f64 / support as f64),
            },
        );
    }

    ScoreReport {
        window_confusion: confusion
            .into_iter()
            .map(|((expected, actual), count)| ConfusionCell {
                expected,
                actual,
                count,
            })
            .collect(),
        per_class,
        vp_truth_spoofed,
        vp_detected_spoofed: vp_detected,
        vp_true_positives: vp_detected_and_truth,
        vp_false_positives,
        spoof_recall: if vp_truth_spoofed > 0 {
            vp_detected_and_truth as f64 / vp_truth_spoofed as f64
        } else {
            1.0
        },
        spoof_precision: if vp_detected > 0 {
            vp_detected_and_truth as f64 / vp_detected as f64
        } else {
            1.0
        },
    }
}
