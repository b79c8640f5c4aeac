//! Parsing of measurement exports and the declarative data files that drive
//! detection: the per-letter server-ID pattern profile and the known-sites
//! list.
//!
//! The canonical on-disk format for observations is one JSON record per line
//! (see `docs/formats.md`). Parsers are total: any byte stream yields
//! observations plus a skip report; only stream-level I/O failures are fatal.

pub mod fetch;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::net::Ipv4Addr;
use std::path::Path;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    DnsObservation, Letter, ModelError, PingObservation, ServiceLetter, TracerouteObservation,
    VantagePoint,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading input: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file}: {problem}")]
    Config { file: String, problem: String },
    #[error("pattern profile is missing letters: {0:?}")]
    MissingLetters(Vec<Letter>),
    #[error("pattern profile has no patterns for letter {0}")]
    EmptyPatternList(Letter),
    #[error("invalid pattern {pattern:?} for letter {letter}: {source}")]
    BadPattern {
        letter: Letter,
        pattern: String,
        source: regex::Error,
    },
}

/// Outcome of a lenient parse: how many records survived, how many were
/// dropped, and a capped sample of the reasons.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SkipReport {
    pub parsed: usize,
    pub skipped: usize,
    pub examples: Vec<SkippedLine>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

const SKIP_EXAMPLE_CAP: usize = 20;

impl SkipReport {
    fn note(&mut self, line: usize, reason: String) {
        self.skipped += 1;
        if self.examples.len() < SKIP_EXAMPLE_CAP {
            self.examples.push(SkippedLine { line, reason });
        }
    }
}

/// Lenient line-oriented record parser shared by every canonical format.
pub fn parse_record_stream<T, F>(
    input: impl std::io::Read,
    check: F,
) -> Result<(Vec<T>, SkipReport), IngestError>
where
    T: DeserializeOwned,
    F: Fn(&T) -> Result<(), ModelError>,
{
    let mut reader = std::io::BufReader::new(input);
    let mut out = Vec::new();
    let mut report = SkipReport::default();
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = match std::str::from_utf8(&buf) {
            Ok(s) => s.trim(),
            Err(_) => {
                report.note(line_no, "invalid utf-8".to_owned());
                continue;
            }
        };
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(line) {
            Ok(record) => match check(&record) {
                Ok(()) => {
                    report.parsed += 1;
                    out.push(record);
                }
                Err(e) => report.note(line_no, e.to_string()),
            },
            Err(e) => report.note(line_no, e.to_string()),
        }
    }
    Ok((out, report))
}

/// Parses newline-delimited DNS (hostname.bind) records. Malformed records
/// are counted and skipped.
pub fn parse_dns_results(
    input: impl std::io::Read,
) -> Result<(Vec<DnsObservation>, SkipReport), IngestError> {
    parse_record_stream(input, DnsObservation::check)
}

pub fn parse_ping_results(
    input: impl std::io::Read,
) -> Result<(Vec<PingObservation>, SkipReport), IngestError> {
    parse_record_stream(input, PingObservation::check)
}

/// Parses traceroute records. Non-responding hops appear with no responder;
/// structural checks (TTL ordering) are applied here, while `reached`
/// consistency against the service address needs the known-sites list and is
/// checked by the pipeline.
pub fn parse_traceroute_results(
    input: impl std::io::Read,
) -> Result<(Vec<TracerouteObservation>, SkipReport), IngestError> {
    parse_record_stream(input, TracerouteObservation::check)
}

/// Parses a vantage-point index (one VP record per line).
pub fn parse_vantage_points(
    input: impl std::io::Read,
) -> Result<(Vec<VantagePoint>, SkipReport), IngestError> {
    parse_record_stream(input, |_| Ok(()))
}

/// Indexes VPs by id. Ids must be unique within a dataset; later duplicates
/// are dropped and counted so the caller can surface them.
pub fn index_vantage_points(
    vps: Vec<VantagePoint>,
) -> (BTreeMap<crate::model::VpId, VantagePoint>, usize) {
    let mut index = BTreeMap::new();
    let mut duplicates = 0usize;
    for vp in vps {
        if index.contains_key(&vp.vp_id) {
            duplicates += 1;
        } else {
            index.insert(vp.vp_id.clone(), vp);
        }
    }
    (index, duplicates)
}

/// One observation as a canonical record line.
pub fn to_record_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("record serialization cannot fail")
}

/// Per-letter anycast deployment facts: service address, ICMP behavior,
/// published site codes, and the penultimate-hop addresses of known sites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnownSites {
    pub source_date: String,
    letters: BTreeMap<Letter, LetterEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LetterEntry {
    pub service_address: Ipv4Addr,
    #[serde(default = "default_true")]
    pub icmp_responsive: bool,
    #[serde(default)]
    pub sites: BTreeSet<String>,
    #[serde(default)]
    pub penultimate_hops: BTreeSet<Ipv4Addr>,
}

fn default_true() -> bool {
    true
}

impl KnownSites {
    pub fn new(
        source_date: String,
        letters: BTreeMap<Letter, LetterEntry>,
    ) -> Result<Self, IngestError> {
        let missing: Vec<Letter> = Letter::ALL
            .iter()
            .copied()
            .filter(|l| !letters.contains_key(l))
            .collect();
        if !missing.is_empty() {
            return Err(IngestError::MissingLetters(missing));
        }
        Ok(KnownSites {
            source_date,
            letters,
        })
    }

    /// Entry for a letter. Total once constructed: all 13 letters are present.
    pub fn entry(&self, letter: Letter) -> &LetterEntry {
        &self.letters[&letter]
    }

    pub fn service(&self, letter: Letter) -> ServiceLetter {
        let e = self.entry(letter);
        ServiceLetter {
            letter,
            service_address: e.service_address,
            icmp_responsive: e.icmp_responsive,
        }
    }

    pub fn service_address(&self, letter: Letter) -> Ipv4Addr {
        self.entry(letter).service_address
    }

    pub fn icmp_responsive(&self, letter: Letter) -> bool {
        self.entry(letter).icmp_responsive
    }
}

#[derive(Deserialize)]
struct KnownSitesFile {
    source_date: String,
    letters: BTreeMap<String, LetterEntry>,
}

/// Loads the known-sites list from its TOML file.
pub fn load_known_sites(path: impl AsRef<Path>) -> Result<KnownSites, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_known_sites(&text).map_err(|problem| IngestError::Config {
        file: path.display().to_string(),
        problem,
    })
}

pub fn parse_known_sites(text: &str) -> Result<KnownSites, String> {
    let raw: KnownSitesFile = toml::from_str(text).map_err(|e| e.to_string())?;
    let mut letters = BTreeMap::new();
    for (k, v) in raw.letters {
        let letter: Letter = k.parse().map_err(|e: ModelError| e.to_string())?;
        letters.insert(letter, v);
    }
    KnownSites::new(raw.source_date, letters).map_err(|e| e.to_string())
}

/// Anchored, case-insensitive server-ID patterns per letter.
///
/// Operator naming conventions evolve; the profile is a versioned data file,
/// not code. A server ID is legitimate for a letter when it matches any of
/// the letter's patterns in full.
#[derive(Debug, Clone)]
pub struct PatternProfile {
    pub version: String,
    sources: BTreeMap<Letter, Vec<String>>,
    compiled: BTreeMap<Letter, Vec<Regex>>,
}

impl PatternProfile {
    pub fn new(
        version: String,
        patterns: BTreeMap<Letter, Vec<String>>,
    ) -> Result<Self, IngestError> {
        let missing: Vec<Letter> = Letter::ALL
            .iter()
            .copied()
            .filter(|l| !patterns.contains_key(l))
            .collect();
        if !missing.is_empty() {
            return Err(IngestError::MissingLetters(missing));
        }
        let mut compiled = BTreeMap::new();
        for (&letter, pats) in &patterns {
            if pats.is_empty() {
                return Err(IngestError::EmptyPatternList(letter));
            }
            let mut regexes = Vec::with_capacity(pats.len());
            for pat in pats {
                // full-string, case-insensitive; anchoring is enforced here so
                // "nnn1-lax2.evil.example" cannot pass an unanchored pattern
                let wrapped = format!("(?i)^(?:{pat})$");
                let re = Regex::new(&wrapped).map_err(|source| IngestError::BadPattern {
                    letter,
                    pattern: pat.clone(),
                    source,
                })?;
                regexes.push(re);
            }
            compiled.insert(letter, regexes);
        }
        Ok(PatternProfile {
            version,
            sources: patterns,
            compiled,
        })
    }

    pub fn matches(&self, letter: Letter, server_id: &str) -> bool {
        self.compiled[&letter]
            .iter()
            .any(|re| re.is_match(server_id))
    }

    pub fn patterns(&self, letter: Letter) -> &[String] {
        &self.sources[&letter]
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("version = {:?}\n\n[patterns]\n", self.version));
        for (letter, pats) in &self.sources {
            let list: Vec<String> = pats.iter().map(|p| format!("{p:?}")).collect();
            out.push_str(&format!("{} = [{}]\n", letter, list.join(", ")));
        }
        out
    }
}

#[derive(Deserialize)]
struct ProfileFile {
    version: String,
    patterns: BTreeMap<String, Vec<String>>,
}

pub fn load_pattern_profile(path: impl AsRef<Path>) -> Result<PatternProfile, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_pattern_profile(&text).map_err(|e| match e {
        IngestError::Config { problem, .. } => IngestError::Config {
            file: path.display().to_string(),
            problem,
        },
        other => other,
    })
}

pub fn parse_pattern_profile(text: &str) -> Result<PatternProfile, IngestError> {
    let raw: ProfileFile = toml::from_str(text).map_err(|e| IngestError::Config {
        file: String::new(),
        problem: e.to_string(),
    })?;
    let mut patterns = BTreeMap::new();
    for (k, v) in raw.patterns {
        let letter: Letter = k.parse().map_err(|e: ModelError| IngestError::Config {
            file: String::new(),
            problem: e.to_string(),
        })?;
        patterns.insert(letter, v);
    }
    PatternProfile::new(raw.version, patterns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VpId;

    fn all_letter_patterns(pat: &str) -> BTreeMap<Letter, Vec<String>> {
        Letter::ALL
            .iter()
            .map(|&l| (l, vec![pat.to_owned()]))
            .collect()
    }

    #[test]
    fn dns_record_round_trips() {
        let obs = DnsObservation::answered(
            VpId::from("vp001"),
            Letter::A,
            1_588_464_000,
            "nnn1-lon3",
            12.5,
        );
        let line = to_record_line(&obs);
        let (parsed, report) = parse_dns_results(line.as_bytes()).unwrap();
        assert_eq!(parsed, vec![obs]);
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn timeout_record_has_no_rtt() {
        let line = r#"{"vp_id":"vp001","letter":"A","timestamp":100,"outcome":"timeout"}"#;
        let (parsed, _) = parse_dns_results(line.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 1);
        assert!(parsed[0].rtt_ms.is_none());
        assert!(parsed[0].server_id.is_none());
    }

    #[test]
    fn corrupt_lines_are_counted_not_fatal() {
        let mut data = String::new();
        for i in 0..997 {
            data.push_str(&to_record_line(&DnsObservation::timeout(
                VpId::new(format!("vp{i}")),
                Letter::C,
                i,
            )));
            data.push('\n');
        }
        data.push_str("{corrupt\n");
        data.push_str(r#"{"vp_id":"x","letter":"A","timestamp":1,"outcome":"answered"}"#);
        data.push('\n');
        data.push_str("not json at all\n");
        let (parsed, report) = parse_dns_results(data.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 997);
        assert_eq!(report.skipped, 3);
        assert_eq!(report.parsed, 997);
    }

    #[test]
    fn profile_accepts_operator_shapes() {
        let profile =
            PatternProfile::new("test".into(), all_letter_patterns("nnn1-[a-z]{3}[0-9]+")).unwrap();
        assert!(profile.matches(Letter::A, "nnn1-lax2"));
        assert!(profile.matches(Letter::A, "NNN1-LON3")); // case-insensitive
        assert!(!profile.matches(Letter::A, "nnn1-lax2.evil.example")); // anchored
        assert!(!profile.matches(Letter::A, "2kom.ru"));
    }

    #[test]
    fn profile_requires_all_letters() {
        let mut patterns = all_letter_patterns("x");
        patterns.remove(&Letter::M);
        match PatternProfile::new("test".into(), patterns) {
            Err(IngestError::MissingLetters(missing)) => assert_eq!(missing, vec![Letter::M]),
            other => panic!("expected missing-letter error, got {other:?}"),
        }
    }

    #[test]
    fn empty_profile_is_an_error() {
        assert!(parse_pattern_profile("").is_err());
    }

    #[test]
    fn known_sites_file_parses() {
        let mut text = String::from("source_date = \"2020-05-03\"\n");
        for l in Letter::ALL {
            text.push_str(&format!(
                "[letters.{l}]\nservice_address = \"192.0.2.{}\"\nicmp_responsive = {}\nsites = [\"lax\"]\n",
                l as u8 + 1,
                l != Letter::G,
            ));
        }
        let sites = parse_known_sites(&text).unwrap();
        assert!(!sites.icmp_responsive(Letter::G));
        assert!(sites.icmp_responsive(Letter::A));
        assert!(sites.entry(Letter::A).penultimate_hops.is_empty());
    }

    #[test]
    fn known_sites_missing_letter_is_an_error() {
        let text = "source_date = \"x\"\n[letters.A]\nservice_address = \"192.0.2.1\"\n";
        assert!(parse_known_sites(text).is_err());
    }
}
