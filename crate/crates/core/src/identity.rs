//! Clustering of overt spoofers into unique spoofing parties, and party
//! categorization.
//!
//! Server IDs observed in spoofed answers are grouped into parties in four
//! steps: IDs that are bare IP addresses are first replaced through an
//! offline reverse-DNS map; IDs with a recognizable DNS name group by their
//! registrable domain (public-suffix rules shipped as data); IDs matching the
//! curated company map group under the company, applied last as an override;
//! the remaining generic IDs (DNS13, DNS-Expire, ...) group by the AS of the
//! observing VPs.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Classification, VantagePoint, Verdict, VpId};

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {problem}")]
    BadLine {
        path: String,
        line: usize,
        problem: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Isp,
    NetworkProvider,
    Education,
    DnsTool,
    Vpn,
    Hardware,
    Personal,
    Unidentifiable,
}

impl Category {
    pub fn parse(s: &str) -> Option<Category> {
        match s.trim().to_ascii_lowercase().as_str() {
            "isp" | "isps" => Some(Category::Isp),
            "network_provider" | "network-provider" => Some(Category::NetworkProvider),
            "education" => Some(Category::Education),
            "dns_tool" | "dns-tool" => Some(Category::DnsTool),
            "vpn" => Some(Category::Vpn),
            "hardware" => Some(Category::Hardware),
            "personal" => Some(Category::Personal),
            "unidentifiable" => Some(Category::Unidentifiable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingBasis {
    DnsSuffix,
    ReverseDns,
    CompanyName,
    VpAsn,
}

/// One spoofing party: the server-ID strings attributed to it, how they were
/// grouped, and the party's category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpooferCluster {
    pub cluster_id: String,
    pub member_server_ids: BTreeSet<String>,
    pub grouping_basis: GroupingBasis,
    /// Human-readable party name, or "unidentifiable".
    pub label: String,
    pub category: Category,
}

/// Offline IP-to-name map; live lookups are never performed so historical
/// analyses stay reproducible.
#[derive(Debug, Clone, Default)]
pub struct ReverseDnsMap {
    entries: BTreeMap<Ipv4Addr, String>,
}

impl ReverseDnsMap {
    pub fn lookup(&self, addr: Ipv4Addr) -> Option<&str> {
        self.entries.get(&addr).map(String::as_str)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IdentityError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IdentityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Format: `<ipv4> <name>` per line, `#` comments.
    pub fn parse(text: &str, path: &str) -> Result<Self, IdentityError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(ip), Some(name)) = (parts.next(), parts.next()) else {
                return Err(IdentityError::BadLine {
                    path: path.to_owned(),
                    line: i + 1,
                    problem: "expected `<ip> <name>`".to_owned(),
                });
            };
            let addr: Ipv4Addr = ip.parse().map_err(|_| IdentityError::BadLine {
                path: path.to_owned(),
                line: i + 1,
                problem: format!("bad IPv4 address {ip:?}"),
            })?;
            entries.insert(addr, name.to_ascii_lowercase());
        }
        Ok(ReverseDnsMap { entries })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CompanyEntry {
    key: String,
    label: String,
    category: Category,
}

/// Curated company names with categories. Keys containing a dot match the
/// registrable domain of an ID exactly; bare keys match as substrings, which
/// is how IDs like `comcast-cns13` land under the company.
#[derive(Debug, Clone, Default)]
pub struct CompanyMap {
    entries: Vec<CompanyEntry>,
}

impl CompanyMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IdentityError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IdentityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Format: `<key>\t<label>\t<category>` per line (any whitespace runs
    /// accepted), `#` comments.
    pub fn parse(text: &str, path: &str) -> Result<Self, IdentityError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(IdentityError::BadLine {
                    path: path.to_owned(),
                    line: i + 1,
                    problem: "expected `<key> <label> <category>`".to_owned(),
                });
            }
            let category = Category::parse(parts[2]).ok_or_else(|| IdentityError::BadLine {
                path: path.to_owned(),
                line: i + 1,
                problem: format!("unknown category {:?}", parts[2]),
            })?;
            entries.push(CompanyEntry {
                key: parts[0].to_ascii_lowercase(),
                label: parts[1].to_owned(),
                category,
            });
        }
        Ok(CompanyMap { entries })
    }

    fn lookup(&self, id: &str, registrable: Option<&str>) -> Option<&CompanyEntry> {
        let id = id.to_ascii_lowercase();
        self.entries.iter().find(|e| {
            if e.key.contains('.') {
                registrable == Some(e.key.as_str()) || id == e.key
            } else {
                id.contains(&e.key)
            }
        })
    }

    /// Category for a cluster label, used by [`categorize`].
    fn category_for_label(&self, label: &str) -> Option<Category> {
        let lower = label.to_ascii_lowercase();
        self.entries
            .iter()
            .find(|e| e.label.to_ascii_lowercase() == lower || e.key == lower)
            .map(|e| e.category)
    }
}

/// Public-suffix rules, shipped as a data file in the standard list format
/// (`//` comments; `*.` wildcard rules; `!` exception rules).
#[derive(Debug, Clone, Default)]
pub struct PublicSuffixList {
    rules: BTreeSet<Vec<String>>,
    exceptions: BTreeSet<Vec<String>>,
}

impl PublicSuffixList {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IdentityError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IdentityError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        let mut rules = BTreeSet::new();
        let mut exceptions = BTreeSet::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            if let Some(rest) = line.strip_prefix('!') {
                exceptions.insert(labels_of(rest));
            } else {
                rules.insert(labels_of(line));
            }
        }
        PublicSuffixList { rules, exceptions }
    }

    /// Length in labels of the public suffix of `labels`, if any rule matches.
    /// Follows the list algorithm: exceptions beat rules, longest rule wins,
    /// and the implicit `*` rule makes the last label a suffix by default.
    fn suffix_len(&self, labels: &[String]) -> usize {
        for exc in &self.exceptions {
            if rule_matches(exc, labels) {
                return exc.len() - 1;
            }
        }
        let mut best = 0usize;
        for rule in &self.rules {
            if rule_matches(rule, labels) {
                best = best.max(rule.len());
            }
        }
        best.max(1)
    }

    /// The registrable domain (public suffix plus one label) of a name, or
    /// `None` when the name is a bare suffix or not domain-shaped.
    pub fn registrable_domain(&self, name: &str) -> Option<String> {
        let name = name.trim().trim_end_matches('.').to_ascii_lowercase();
        if name.is_empty() || !name.contains('.') || name.parse::<Ipv4Addr>().is_ok() {
            return None;
        }
        let labels = labels_of(&name);
        if labels.iter().any(|l| l.is_empty()) {
            return None;
        }
        // the final label must look like a TLD, not a number
        if labels
            .last()
            .is_some_and(|l| l.chars().all(|c| c.is_ascii_digit()))
        {
            return None;
        }
        let suffix = self.suffix_len(&labels);
        if labels.len() <= suffix {
            return None;
        }
        Some(labels[labels.len() - suffix - 1..].join("."))
    }
}

fn labels_of(name: &str) -> Vec<String> {
    name.split('.').map(str::to_owned).collect()
}

fn rule_matches(rule: &[String], labels: &[String]) -> bool {
    if rule.len() > labels.len() {
        return false;
    }
    rule.iter()
        .rev()
        .zip(labels.iter().rev())
        .all(|(r, l)| r == "*" || r == l)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Company(String),
    Suffix(String),
    Asn(u32),
}

/// Clusters the spoofed server IDs of an epoch into spoofing parties.
///
/// Maps may be absent (the pipeline still runs); each skipped step is
/// reported as a warning. The result is a partition of the observed ID
/// strings, deterministic in the inputs: a generic ID seen from several ASes
/// is attributed to the AS observing it most (ties to the lowest ASN).
pub fn cluster_spoofers(
    verdicts: &[Verdict],
    rdns: Option<&ReverseDnsMap>,
    companies: Option<&CompanyMap>,
    psl: &PublicSuffixList,
    vp_index: &BTreeMap<VpId, VantagePoint>,
) -> (Vec<SpooferCluster>, Vec<String>) {
    let mut warnings = Vec::new();
    if rdns.is_none() {
        warnings.push("no reverse-DNS map: IP-address server IDs stay generic".to_owned());
    }
    if companies.is_none() {
        warnings.push("no company map: all parties categorized as unidentifiable".to_owned());
    }

    // (id -> observing ASNs with observation counts)
    let mut observers: BTreeMap<String, BTreeMap<u32, u32>> = BTreeMap::new();
    for v in verdicts {
        if v.classification != Classification::OvertSpoofed {
            continue;
        }
        let Some(overt) = &v.evidence.overt else {
            continue;
        };
        let asn = vp_index.get(&v.vp_id).map(|vp| vp.asn).unwrap_or(0);
        for id in overt.unmatched_ids() {
            *observers
                .entry(id.to_owned())
                .or_default()
                .entry(asn)
                .or_insert(0) += 1;
        }
    }

    let mut groups: BTreeMap<GroupKey, (BTreeSet<String>, GroupingBasis)> = BTreeMap::new();
    for (id, asns) in &observers {
        // step 1: IP-address IDs go through the offline reverse-DNS map
        let mut via_rdns = false;
        let resolved: String = match id.parse::<Ipv4Addr>() {
            Ok(addr) => match rdns.and_then(|m| m.lookup(addr)) {
                Some(name) => {
                    via_rdns = true;
                    name.to_owned()
                }
                None => id.clone(),
            },
            Err(_) => id.clone(),
        };

        // steps 2-4, with the company map applied last as an override
        let registrable = psl.registrable_domain(&resolved);
        let company = companies.and_then(|m| m.lookup(&resolved, registrable.as_deref()));
        let (key, basis) = if let Some(entry) = company {
            (
                GroupKey::Company(entry.label.clone()),
                GroupingBasis::CompanyName,
            )
        } else if let Some(domain) = registrable {
            (
                GroupKey::Suffix(domain),
                if via_rdns {
                    GroupingBasis::ReverseDns
                } else {
                    GroupingBasis::DnsSuffix
                },
            )
        } else {
            let asn = asns
                .iter()
                .max_by_key(|&(asn, count)| (*count, std::cmp::Reverse(*asn)))
                .map(|(&asn, _)| asn)
                .unwrap_or(0);
            (GroupKey::Asn(asn), GroupingBasis::VpAsn)
        };

        let entry = groups
            .entry(key)
            .or_insert_with(|| (BTreeSet::new(), basis));
        entry.0.insert(id.clone());
        // reverse-DNS evidence is the more specific basis for a mixed cluster
        if basis == GroupingBasis::ReverseDns {
            entry.1 = GroupingBasis::ReverseDns;
        }
    }

    let clusters = groups
        .into_iter()
        .map(|(key, (members, basis))| {
            let (cluster_id, label) = match &key {
                GroupKey::Company(name) => (format!("company:{name}"), name.clone()),
                GroupKey::Suffix(domain) => (format!("suffix:{domain}"), domain.clone()),
                GroupKey::Asn(asn) => (format!("asn:{asn}"), "unidentifiable".to_owned()),
            };
            let mut cluster = SpooferCluster {
                cluster_id,
                member_server_ids: members,
                grouping_basis: basis,
                label,
                category: Category::Unidentifiable,
            };
            cluster.category = categorize(&cluster, companies);
            cluster
        })
        .collect();
    (clusters, warnings)
}

/// Category of a cluster from the curated map; unidentifiable by default.
/// AS-grouped clusters carry no name evidence and are always unidentifiable.
pub fn categorize(cluster: &SpooferCluster, companies: Option<&CompanyMap>) -> Category {
    if cluster.grouping_basis == GroupingBasis::VpAsn {
        return Category::Unidentifiable;
    }
    companies
        .and_then(|m| m.category_for_label(&cluster.label))
        .unwrap_or(Category::Unidentifiable)
}

/// Per-category cluster counts, for the party-classification report.
pub fn category_counts(clusters: &[SpooferCluster]) -> BTreeMap<Category, u32> {
    let mut counts = BTreeMap::new();
    for c in clusters {
        *counts.entry(c.category).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect_overt::{ObservedId, OvertEvidence};
    use crate::model::{Letter, Prefix24};

    fn psl() -> PublicSuffixList {
        PublicSuffixList::parse(
            "// test rules\ncom\nnet\norg\nru\nch\nee\neu\nco.uk\n*.jp\n!city.kawasaki.jp\n",
        )
    }

    fn companies() -> CompanyMap {
        CompanyMap::parse(
            "2kom.ru 2kom.ru isp\nnordvpn.com NordVPN vpn\neero.com eero hardware\ncomcast Comcast isp\n",
            "test",
        )
        .unwrap()
    }

    fn spoofed_verdict(
        vp: &str,
        asn: u32,
        ids: &[&str],
        vp_index: &mut BTreeMap<VpId, VantagePoint>,
    ) -> Verdict {
        let vp_id = VpId::from(vp);
        vp_index.insert(
            vp_id.clone(),
            VantagePoint {
                vp_id: vp_id.clone(),
                public_prefix: Prefix24::of(Ipv4Addr::new(192, 0, 2, 1)),
                asn,
                country: "US".to_owned(),
                coordinates: None,
            },
        );
        let mut v = Verdict::new(vp_id, Letter::A, 0, Classification::OvertSpoofed);
        v.evidence.overt = Some(OvertEvidence {
            observed: ids
                .iter()
                .map(|id| ObservedId {
                    id: (*id).to_owned(),
                    count: 1,
                    matched: false,
                })
                .collect(),
            first_unmatched: Some(ids[0].to_owned()),
        });
        v
    }

    #[test]
    fn registrable_domain_extraction() {
        let psl = psl();
        assert_eq!(
            psl.registrable_domain("njamerson.rdit.ch").as_deref(),
            Some("rdit.ch")
        );
        assert_eq!(
            psl.registrable_domain("chic-cns13.nlb.mdw1.comcast.net")
                .as_deref(),
            Some("comcast.net")
        );
        assert_eq!(
            psl.registrable_domain("a.b.co.uk").as_deref(),
            Some("b.co.uk")
        );
        assert_eq!(
            psl.registrable_domain("x.anything.jp").as_deref(),
            Some("x.anything.jp")
        );
        assert_eq!(
            psl.registrable_domain("sub.city.kawasaki.jp").as_deref(),
            Some("city.kawasaki.jp")
        );
        assert_eq!(psl.registrable_domain("DNS13"), None);
        assert_eq!(psl.registrable_domain("com"), None);
        assert_eq!(psl.registrable_domain("10.0.0.1"), None);
    }

    #[test]
    fn common_suffix_groups_into_one_cluster() {
        let mut vp_index = BTreeMap::new();
        let verdicts = vec![
            spoofed_verdict("vp1", 100, &["njamerson.rdit.ch"], &mut vp_index),
            spoofed_verdict("vp2", 200, &["ninishowen.rdit.ch"], &mut vp_index),
        ];
        let (clusters, _) = cluster_spoofers(&verdicts, None, None, &psl(), &vp_index);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].label, "rdit.ch");
        assert_eq!(clusters[0].grouping_basis, GroupingBasis::DnsSuffix);
        assert_eq!(clusters[0].member_server_ids.len(), 2);
    }

    #[test]
    fn generic_ids_group_by_vp_asn() {
        let mut vp_index = BTreeMap::new();
        let verdicts = vec![
            spoofed_verdict("vp1", 64500, &["DNS13"], &mut vp_index),
            spoofed_verdict("vp2", 64500, &["DNS13"], &mut vp_index),
        ];
        let (clusters, _) = cluster_spoofers(&verdicts, None, None, &psl(), &vp_index);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].cluster_id, "asn:64500");
        assert_eq!(clusters[0].grouping_basis, GroupingBasis::VpAsn);
        assert_eq!(clusters[0].category, Category::Unidentifiable);
        assert_eq!(clusters[0].label, "unidentifiable");
    }

    #[test]
    fn company_map_assigns_category() {
        let mut vp_index = BTreeMap::new();
        let verdicts = vec![spoofed_verdict("vp1", 1, &["2kom.ru"], &mut vp_index)];
        let companies = companies();
        let (clusters, _) = cluster_spoofers(&verdicts, None, Some(&companies), &psl(), &vp_index);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].category, Category::Isp);
        assert_eq!(clusters[0].grouping_basis, GroupingBasis::CompanyName);
    }

    #[test]
    fn categorize_defaults_to_unidentifiable() {
        let companies = companies();
        let mk = |label: &str, basis| SpooferCluster {
            cluster_id: format!("suffix:{label}"),
            member_server_ids: BTreeSet::new(),
            grouping_basis: basis,
            label: label.to_owned(),
            category: Category::Unidentifiable,
        };
        assert_eq!(
            categorize(
                &mk("nordvpn.com", GroupingBasis::DnsSuffix),
                Some(&companies)
            ),
            Category::Vpn
        );
        assert_eq!(
            categorize(&mk("eero.com", GroupingBasis::DnsSuffix), Some(&companies)),
            Category::Hardware
        );
        assert_eq!(
            categorize(
                &mk("unknown.example", GroupingBasis::DnsSuffix),
                Some(&companies)
            ),
            Category::Unidentifiable
        );
    }

    #[test]
    fn reverse_dns_resolves_ip_ids() {
        let mut vp_index = BTreeMap::new();
        let verdicts = vec![spoofed_verdict("vp1", 7, &["203.0.113.5"], &mut vp_index)];
        let rdns = ReverseDnsMap::parse("203.0.113.5 resolver.rdit.ch\n", "test").unwrap();
        let (clusters, _) = cluster_spoofers(&verdicts, Some(&rdns), None, &psl(), &vp_index);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].label, "rdit.ch");
        assert_eq!(clusters[0].grouping_basis, GroupingBasis::ReverseDns);
        // members keep the original ID string
        assert!(clusters[0].member_server_ids.contains("203.0.113.5"));
    }

    #[test]
    fn clustering_is_a_partition_and_order_insensitive() {
        let mut vp_index = BTreeMap::new();
        let mut verdicts = vec![
            spoofed_verdict("vp1", 1, &["a.rdit.ch", "DNS13"], &mut vp_index),
            spoofed_verdict("vp2", 2, &["b.rdit.ch", "2kom.ru"], &mut vp_index),
            spoofed_verdict("vp3", 3, &["203.0.113.9"], &mut vp_index),
        ];
        let companies = companies();
        let (clusters_a, _) =
            cluster_spoofers(&verdicts, None, Some(&companies), &psl(), &vp_index);
        verdicts.reverse();
        let (clusters_b, _) =
            cluster_spoofers(&verdicts, None, Some(&companies), &psl(), &vp_index);
        assert_eq!(clusters_a, clusters_b);

        let mut seen = BTreeSet::new();
        for c in &clusters_a {
            for id in &c.member_server_ids {
                assert!(seen.insert(id.clone()), "{id} in two clusters");
            }
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn missing_maps_warn_but_cluster() {
        let mut vp_index = BTreeMap::new();
        let verdicts = vec![spoofed_verdict("vp1", 1, &["x.example.com"], &mut vp_index)];
        let (clusters, warnings) = cluster_spoofers(&verdicts, None, None, &psl(), &vp_index);
        assert_eq!(clusters.len(), 1);
        assert_eq!(warnings.len(), 2);
    }
}
