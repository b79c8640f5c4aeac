//! End-to-end checks of the pipeline against simulator ground truth: planted
//! adversaries are found, mechanism proportions match the validation-week
//! shape, and the generated data is self-consistent.

use std::collections::{BTreeMap, BTreeSet};

use spoofscope_core::detect_covert::CovertConfig;
use spoofscope_core::ingest;
use spoofscope_core::mechanism::build_penultimate_set;
use spoofscope_core::model::{build_windows, Classification, Letter, Mechanism, Observation, VpId};
use spoofscope_core::pipeline::{detect_windows, PipelineConfig};
use spoofscope_core::simulate::{
    build_topology, generate, score, AdversaryKind, AdversaryModel, LossConfig, MixEntry,
    ScenarioConfig, TopologySpec,
};
use spoofscope_core::validate::{match_queries, LogIndex, QNAME, QTYPE};

fn entry_with(
    kind: AdversaryKind,
    count: u32,
    tweak: impl FnOnce(&mut AdversaryModel),
) -> MixEntry {
    let mut model = AdversaryModel::honest();
    model.kind = kind;
    match kind {
        AdversaryKind::OvertProxy => {
            model.spoof_server_id = "sawo".into();
            model.drop_query = true;
        }
        AdversaryKind::OvertInjector => {
            model.spoof_server_id = "hosting".into();
        }
        AdversaryKind::AnycastHijacker => {
            model.spoof_server_id = "2kom.ru".into();
            model.drop_query = true;
        }
        AdversaryKind::Flapper => {
            model.spoof_server_id = "dns-expire".into();
        }
        _ => {}
    }
    tweak(&mut model);
    MixEntry {
        model,
        probability: None,
        count: Some(count),
    }
}

fn base_scenario(n_vps: u32, letters: &[(Letter, u32)], mix: Vec<MixEntry>) -> ScenarioConfig {
    ScenarioConfig {
        seed: 4242,
        n_vps,
        schedule: vec![1_547_092_800],
        jitter_mad_ms: 0.5,
        base_rtt_ms: (20.0, 60.0),
        base_rtt_letter: BTreeMap::new(),
        loss: LossConfig::default(),
        mix,
        topology: TopologySpec {
            sites: letters.iter().copied().collect(),
            icmp_dark: BTreeSet::new(),
        },
        countries: vec!["US".into(), "DE".into(), "ID".into()],
        n_asns: 50,
    }
}

#[test]
fn hopset_matches_generator_topology() {
    let config = base_scenario(
        40,
        &[(Letter::B, 3)],
        vec![entry_with(AdversaryKind::OvertProxy, 2, |_| {})],
    );
    let out = generate(&config).unwrap();
    let windows = build_windows(out.observations.clone(), &out.schedule);
    let outcome = detect_windows(
        &windows,
        &out.profile,
        &out.known_sites,
        &PipelineConfig::default(),
    );

    let window_index: BTreeMap<(VpId, Letter, i64), &_> =
        windows.iter().map(|w| (w.key(), w)).collect();
    let hopset = build_penultimate_set(&outcome.verdicts, &window_index, &out.known_sites);

    let topology = build_topology(&config.topology);
    let legit: BTreeSet<_> = topology.letters[&Letter::B]
        .1
        .iter()
        .map(|s| s.penultimate_hop)
        .collect();
    let observed = hopset.letter_set(Letter::B).unwrap();
    // every observed authentic hop comes from the generator's site list, and
    // with 38 honest VPs over 3 sites every site is seen
    assert_eq!(observed, &legit);
}

#[test]
fn proxy_vp_is_flagged_non_anycast_and_unmatched() {
    let config = base_scenario(
        30,
        &[(Letter::B, 2)],
        vec![entry_with(AdversaryKind::OvertProxy, 1, |m| {
            m.spoof_server_id = "sawo".into();
        })],
    );
    let out = generate(&config).unwrap();
    let windows = build_windows(out.observations.clone(), &out.schedule);
    let outcome = detect_windows(
        &windows,
        &out.profile,
        &out.known_sites,
        &PipelineConfig::default(),
    );

    let spoofed: Vec<_> = outcome
        .verdicts
        .iter()
        .filter(|v| v.classification == Classification::OvertSpoofed)
        .collect();
    assert_eq!(spoofed.len(), 1);
    let truth = out
        .truth
        .iter()
        .find(|t| t.kind == AdversaryKind::OvertProxy)
        .unwrap();
    assert_eq!(spoofed[0].vp_id, truth.vp_id);
    assert_eq!(spoofed[0].mechanism, Some(Mechanism::NonAnycast));
    let overt = spoofed[0].evidence.overt.as_ref().unwrap();
    assert_eq!(overt.first_unmatched.as_deref(), Some("sawo"));

    // server-side: the proxy's queries never arrive
    let vp_index: BTreeMap<VpId, _> = out
        .vps
        .iter()
        .map(|vp| (vp.vp_id.clone(), vp.clone()))
        .collect();
    let log = LogIndex::build(&out.server_log, Letter::B, QNAME, QTYPE).unwrap();
    let letter_windows: Vec<&_> = windows.iter().filter(|w| w.letter == Letter::B).collect();
    let (results, _) = match_queries(&letter_windows, &vp_index, &log, 240);
    let proxy_result = results.iter().find(|r| r.vp_id == truth.vp_id).unwrap();
    assert_eq!(proxy_result.queries_matched, 0);
    assert!(!proxy_result.matched);

    let report = score(&outcome.verdicts, &out.truth);
    assert_eq!(report.spoof_recall, 1.0);
    assert_eq!(report.vp_false_positives, 0);
}

#[test]
fn mechanism_counts_match_validation_week_shape() {
    // 142 spoofed VPs: 137 proxies + 3 injectors (non-anycast) + 2 rogue-anycast
    let mix = vec![
        entry_with(AdversaryKind::OvertProxy, 137, |_| {}),
        entry_with(AdversaryKind::OvertInjector, 3, |_| {}),
        entry_with(AdversaryKind::AnycastHijacker, 2, |_| {}),
    ];
    let config = base_scenario(2000, &[(Letter::B, 3)], mix);
    let out = generate(&config).unwrap();
    let windows = build_windows(out.observations.clone(), &out.schedule);
    let outcome = detect_windows(
        &windows,
        &out.profile,
        &out.known_sites,
        &PipelineConfig::default(),
    );

    let mut anycast = 0;
    let mut non_anycast = 0;
    for v in &outcome.verdicts {
        if v.classification == Classification::OvertSpoofed {
            match v.mechanism {
                Some(Mechanism::Anycast) => anycast += 1,
                Some(m) if m.is_non_anycast() => non_anycast += 1,
                other => panic!("spoofed verdict without mechanism: {other:?}"),
            }
        }
    }
    assert_eq!(anycast, 2);
    assert_eq!(non_anycast, 140);

    // the two anycast verdicts are exactly the planted hijackers
    let hijackers: BTreeSet<VpId> = out
        .truth
        .iter()
        .filter(|t| t.kind == AdversaryKind::AnycastHijacker)
        .map(|t| t.vp_id.clone())
        .collect();
    let flagged: BTreeSet<VpId> = outcome
        .verdicts
        .iter()
        .filter(|v| v.mechanism == Some(Mechanism::Anycast))
        .map(|v| v.vp_id.clone())
        .collect();
    assert_eq!(hijackers, flagged);
}

#[test]
fn covert_delay_threshold_behaviour() {
    // +40 ms fires the three-check rule; +5 ms stays under the floor
    for (delay, expect_delayed) in [(40.0, true), (5.0, false)] {
        let mix = vec![entry_with(AdversaryKind::CovertDelayer, 3, |m| {
            m.added_delay_ms = delay;
        })];
        let mut config = base_scenario(20, &[(Letter::B, 2)], mix);
        config.jitter_mad_ms = 1.0;
        let out = generate(&config).unwrap();
        let windows = build_windows(out.observations.clone(), &out.schedule);
        let outcome = detect_windows(
            &windows,
            &out.profile,
            &out.known_sites,
            &PipelineConfig::default(),
        );
        let delayed: BTreeSet<VpId> = outcome
            .verdicts
            .iter()
            .filter(|v| v.classification == Classification::CovertDelayed)
            .map(|v| v.vp_id.clone())
            .collect();
        let planted: BTreeSet<VpId> = out
            .truth
            .iter()
            .filter(|t| t.kind == AdversaryKind::CovertDelayer)
            .map(|t| t.vp_id.clone())
            .collect();
        if expect_delayed {
            assert_eq!(delayed, planted, "delay {delay} should be detected");
        } else {
            assert!(delayed.is_empty(), "delay {delay} should pass unnoticed");
        }
    }
}

#[test]
fn generated_data_survives_ingest_round_trip() {
    let config = base_scenario(
        15,
        &[(Letter::A, 2), (Letter::G, 1)],
        vec![entry_with(AdversaryKind::OvertProxy, 2, |_| {})],
    );
    let out = generate(&config).unwrap();

    let mut dns_lines = String::new();
    let mut ping_lines = String::new();
    let mut tr_lines = String::new();
    let (mut n_dns, mut n_ping, mut n_tr) = (0usize, 0usize, 0usize);
    for obs in &out.observations {
        match obs {
            Observation::Dns(o) => {
                dns_lines.push_str(&ingest::to_record_line(o));
                dns_lines.push('\n');
                n_dns += 1;
            }
            Observation::Ping(o) => {
                ping_lines.push_str(&ingest::to_record_line(o));
                ping_lines.push('\n');
                n_ping += 1;
            }
            Observation::Traceroute(o) => {
                tr_lines.push_str(&ingest::to_record_line(o));
                tr_lines.push('\n');
                n_tr += 1;
            }
        }
    }
    let (dns, r1) = ingest::parse_dns_results(dns_lines.as_bytes()).unwrap();
    let (ping, r2) = ingest::parse_ping_results(ping_lines.as_bytes()).unwrap();
    let (tr, r3) = ingest::parse_traceroute_results(tr_lines.as_bytes()).unwrap();
    assert_eq!((r1.skipped, r2.skipped, r3.skipped), (0, 0, 0));
    assert_eq!((dns.len(), ping.len(), tr.len()), (n_dns, n_ping, n_tr));

    let mut round_tripped: Vec<Observation> = Vec::new();
    round_tripped.extend(dns.into_iter().map(Observation::Dns));
    round_tripped.extend(ping.into_iter().map(Observation::Ping));
    round_tripped.extend(tr.into_iter().map(Observation::Traceroute));
    // same windows either way
    let a = build_windows(out.observations.clone(), &out.schedule);
    let b = build_windows(round_tripped, &out.schedule);
    assert_eq!(a, b);
}

#[test]
fn every_logged_query_sits_within_tolerance_at_the_right_prefix() {
    let config = base_scenario(
        25,
        &[(Letter::B, 2)],
        vec![
            entry_with(AdversaryKind::CovertDelayer, 3, |m| m.added_delay_ms = 30.0),
            entry_with(AdversaryKind::OvertInjector, 2, |_| {}),
        ],
    );
    let out = generate(&config).unwrap();
    let by_vp: BTreeMap<&VpId, spoofscope_core::model::Prefix24> = out
        .vps
        .iter()
        .map(|vp| (&vp.vp_id, vp.public_prefix))
        .collect();

    // collect forwarded client queries: (prefix, ts)
    let mut forwarded: Vec<(spoofscope_core::model::Prefix24, i64)> = Vec::new();
    for obs in &out.observations {
        if let Observation::Dns(o) = obs {
            let truth = out.truth.iter().find(|t| t.vp_id == o.vp_id).unwrap();
            let drops = matches!(
                truth.kind,
                AdversaryKind::OvertProxy | AdversaryKind::AnycastHijacker
            );
            if o.outcome == spoofscope_core::model::DnsOutcome::Answered && !drops {
                forwarded.push((by_vp[&o.vp_id], o.timestamp));
            }
        }
    }
    forwarded.sort();
    let mut logged: Vec<(spoofscope_core::model::Prefix24, i64)> = out
        .server_log
        .iter()
        .map(|r| (r.source_prefix, r.timestamp))
        .collect();
    logged.sort();
    assert_eq!(forwarded, logged);
}

#[test]
fn all_flapper_population_degrades_without_crashing() {
    let mix = vec![entry_with(AdversaryKind::Flapper, 30, |_| {})];
    let config = base_scenario(30, &[(Letter::A, 2), (Letter::B, 2)], mix);
    let out = generate(&config).unwrap();
    let windows = build_windows(out.observations.clone(), &out.schedule);
    let outcome = detect_windows(
        &windows,
        &out.profile,
        &out.known_sites,
        &PipelineConfig::default(),
    );
    // the deterministic cycle always leaves spoofed answers in the window
    assert!(outcome
        .verdicts
        .iter()
        .all(|v| v.classification == Classification::OvertSpoofed));
    let report = score(&outcome.verdicts, &out.truth);
    assert_eq!(report.spoof_recall, 1.0);
    // evidence preserves the spoof/authentic mix for the flapping analysis
    let overt = outcome.verdicts[0].evidence.overt.as_ref().unwrap();
    assert!(overt.is_mixed());
}

#[test]
fn rtt_equality_tolerance_separates_hijack_from_proxy() {
    let config = CovertConfig::default();
    let make = |dns: f64, ping: f64| spoofscope_core::detect_covert::LatencyStats {
        median_dns: dns,
        median_ping: ping,
        mad_dns: 0.4,
        mad_ping: 0.4,
        delta: (dns - ping).abs(),
        n_dns: 15,
        n_ping: 15,
    };
    // near-equal medians pass the anycast equality test
    assert!(spoofscope_core::mechanism::rtt_equal(
        &make(18.0, 18.4),
        &config
    ));
    // a proxy answering at 5 ms against a 40 ms ping baseline does not
    assert!(!spoofscope_core::mechanism::rtt_equal(
        &make(5.0, 40.0),
        &config
    ));
    // the tolerance is the larger of the floor and the relative band
    assert!(spoofscope_core::mechanism::rtt_equal(
        &make(100.0, 119.0),
        &config
    ));
    assert!(!spoofscope_core::mechanism::rtt_equal(
        &make(100.0, 121.0),
        &config
    ));
}
