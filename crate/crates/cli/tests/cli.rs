//! CLI behavior: exit codes, skip reporting, manifests, and the validate
//! subcommand end to end on a small simulated epoch.

use std::path::{Path, PathBuf};
use std::process::Command;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn spoofscope(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_spoofscope"))
        .args(args)
        .current_dir(workspace_root())
        .output()
        .expect("binary runs")
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let output = spoofscope(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.to_lowercase().contains("usage"),
        "no usage text:\n{stderr}"
    );
}

#[test]
fn missing_input_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let output = spoofscope(&[
        "report",
        "--verdicts",
        "/nonexistent/verdicts.ndjson",
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn malformed_profile_is_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let profile = tmp.path().join("profile.toml");
    // 12 letters only: the validator must name the gap
    let mut text = String::from("version = \"x\"\n[patterns]\n");
    for l in ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L"] {
        text.push_str(&format!("{l} = [\"x\"]\n"));
    }
    std::fs::write(&profile, text).unwrap();
    let empty = tmp.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let schedule = tmp.path().join("schedule.txt");
    std::fs::write(&schedule, "3600\n").unwrap();

    let output = spoofscope(&[
        "detect",
        "--dns",
        empty.to_str().unwrap(),
        "--ping",
        empty.to_str().unwrap(),
        "--traceroute",
        empty.to_str().unwrap(),
        "--known-sites",
        workspace_root()
            .join("data/known_sites.toml")
            .to_str()
            .unwrap(),
        "--profile",
        profile.to_str().unwrap(),
        "--schedule",
        schedule.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains('M'), "missing letter not named:\n{stderr}");
}

#[test]
fn nonpositive_threshold_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let schedule = tmp.path().join("schedule.txt");
    std::fs::write(&schedule, "3600\n").unwrap();
    let output = spoofscope(&[
        "detect",
        "--dns",
        empty.to_str().unwrap(),
        "--ping",
        empty.to_str().unwrap(),
        "--traceroute",
        empty.to_str().unwrap(),
        "--known-sites",
        workspace_root()
            .join("data/known_sites.toml")
            .to_str()
            .unwrap(),
        "--profile",
        workspace_root().join("data/profile.toml").to_str().unwrap(),
        "--schedule",
        schedule.to_str().unwrap(),
        "--covert-floor-ms",
        "0",
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn ingest_counts_corrupt_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw_dns.ndjson");
    let mut text = String::new();
    for i in 0..20 {
        text.push_str(&format!(
            "{{\"vp_id\":\"vp{i:03}\",\"letter\":\"A\",\"timestamp\":{},\"outcome\":\"timeout\"}}\n",
            i * 240
        ));
    }
    text.push_str("{broken json\n");
    text.push_str("{\"vp_id\":\"x\",\"letter\":\"A\",\"timestamp\":1,\"outcome\":\"answered\"}\n"); // violates invariants
    std::fs::write(&raw, text).unwrap();

    let out_dir = tmp.path().join("out");
    let output = spoofscope(&[
        "ingest",
        "--dns",
        raw.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let skip: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("skip_report.json")).unwrap())
            .unwrap();
    assert_eq!(skip["dns"]["parsed"], 20);
    assert_eq!(skip["dns"]["skipped"], 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "ingest");
    assert_eq!(manifest["inputs"][0]["records"], 20);
}

#[test]
fn validate_subcommand_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let scenario = tmp.path().join("scenario.toml");
    std::fs::write(
        &scenario,
        r#"
seed = 7
n_vps = 40
schedule = [1547092800]
jitter_mad_ms = 0.5
base_rtt_ms = [20.0, 50.0]

[topology]
[topology.sites]
B = 2

[[mix]]
count = 5
[mix.model]
kind = "overt_proxy"
spoof_server_id = "sawo"
drop_query = true

[[mix]]
count = 2
[mix.model]
kind = "overt_injector"
spoof_server_id = "hosting"
"#,
    )
    .unwrap();
    let output = spoofscope(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out-dir",
        sim.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let det = tmp.path().join("det");
    let output = spoofscope(&[
        "detect",
        "--dns",
        sim.join("dns.ndjson").to_str().unwrap(),
        "--ping",
        sim.join("ping.ndjson").to_str().unwrap(),
        "--traceroute",
        sim.join("traceroute.ndjson").to_str().unwrap(),
        "--known-sites",
        sim.join("known_sites.toml").to_str().unwrap(),
        "--profile",
        sim.join("profile.toml").to_str().unwrap(),
        "--schedule",
        sim.join("schedule.txt").to_str().unwrap(),
        "--out-dir",
        det.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let val = tmp.path().join("val");
    let output = spoofscope(&[
        "validate",
        "--verdicts",
        det.join("verdicts.ndjson").to_str().unwrap(),
        "--dns",
        sim.join("dns.ndjson").to_str().unwrap(),
        "--ping",
        sim.join("ping.ndjson").to_str().unwrap(),
        "--traceroute",
        sim.join("traceroute.ndjson").to_str().unwrap(),
        "--vps",
        sim.join("vps.ndjson").to_str().unwrap(),
        "--server-log",
        sim.join("server_log.ndjson").to_str().unwrap(),
        "--letter",
        "B",
        "--out-dir",
        val.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(val.join("validation.json")).unwrap())
            .unwrap();
    let hour = &report["true_positive"]["per_hour"][0];
    assert_eq!(hour["spoofed"]["sent"], 7);
    assert_eq!(hour["spoofed"]["received"], 2);
    assert_eq!(hour["not_spoofed"]["sent"], 33);
    assert_eq!(hour["not_spoofed"]["received"], 33);

    // the aligned text table mirrors the same counts
    let table = std::fs::read_to_string(val.join("validation.txt")).unwrap();
    assert!(table.contains("spoofed"), "{table}");
    assert!(table.contains("covert delayers"), "{table}");

    // refined verdicts: 2 injections, 5 proxies
    let refined = std::fs::read_to_string(val.join("verdicts_refined.ndjson")).unwrap();
    let injections = refined.matches("\"injection\"").count();
    let proxies = refined.matches("\"proxy\"").count();
    assert_eq!((injections, proxies), (2, 5));
}

#[test]
fn unsorted_server_log_is_a_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.ndjson");
    std::fs::write(
        &log,
        concat!(
            "{\"timestamp\":100,\"source_prefix\":\"10.0.0.0/24\",\"query_type\":\"TXT\",\"qname\":\"hostname.bind\",\"letter\":\"B\"}\n",
            "{\"timestamp\":50,\"source_prefix\":\"10.0.0.0/24\",\"query_type\":\"TXT\",\"qname\":\"hostname.bind\",\"letter\":\"B\"}\n",
        ),
    )
    .unwrap();
    let verdicts = tmp.path().join("verdicts.ndjson");
    std::fs::write(
        &verdicts,
        "{\"vp_id\":\"vp1\",\"letter\":\"B\",\"window_start\":0,\"classification\":\"valid\"}\n",
    )
    .unwrap();
    let empty = tmp.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();

    let output = spoofscope(&[
        "validate",
        "--verdicts",
        verdicts.to_str().unwrap(),
        "--dns",
        empty.to_str().unwrap(),
        "--ping",
        empty.to_str().unwrap(),
        "--traceroute",
        empty.to_str().unwrap(),
        "--vps",
        empty.to_str().unwrap(),
        "--server-log",
        log.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("sorted"));
}

#[test]
fn shipped_profile_and_sites_load() {
    // the data files in the repo must always satisfy their own validators
    let root = workspace_root();
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let schedule = tmp.path().join("schedule.txt");
    std::fs::write(&schedule, "1588464000\n").unwrap();
    let output = spoofscope(&[
        "detect",
        "--dns",
        empty.to_str().unwrap(),
        "--ping",
        empty.to_str().unwrap(),
        "--traceroute",
        empty.to_str().unwrap(),
        "--known-sites",
        root.join("data/known_sites.toml").to_str().unwrap(),
        "--profile",
        root.join("data/profile.toml").to_str().unwrap(),
        "--schedule",
        schedule.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn inconsistent_reached_traceroutes_are_dropped_and_counted() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let schedule = tmp.path().join("schedule.txt");
    std::fs::write(&schedule, "1588464000\n").unwrap();
    // claims reached, but the last responder is not B's service address
    let traceroute = tmp.path().join("traceroute.ndjson");
    std::fs::write(
        &traceroute,
        "{\"vp_id\":\"vp1\",\"letter\":\"B\",\"timestamp\":1588464000,\"hops\":[{\"ttl\":1,\"responder\":\"10.0.0.1\"}],\"reached\":true}\n",
    )
    .unwrap();

    let out_dir = tmp.path().join("out");
    let output = spoofscope(&[
        "detect",
        "--dns",
        empty.to_str().unwrap(),
        "--ping",
        empty.to_str().unwrap(),
        "--traceroute",
        traceroute.to_str().unwrap(),
        "--known-sites",
        workspace_root()
            .join("data/known_sites.toml")
            .to_str()
            .unwrap(),
        "--profile",
        workspace_root().join("data/profile.toml").to_str().unwrap(),
        "--schedule",
        schedule.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["counts"]["traceroutes_inconsistent_reached"], 1);
    assert_eq!(manifest["counts"]["observations_in_schedule"], 0);
}
