use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn protoscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = protoscope(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, manifest: &Path) -> String {
    let pcap = dir.join("corpus.pcap");
    ok(&["synth", "--manifest", manifest.to_str().unwrap(), "--out", pcap.to_str().unwrap()]);
    assert!(dir.join("corpus.pcap.truth.json").exists());
    pcap.to_str().unwrap().to_string()
}

#[test]
fn shipped_models_validate() {
    let out = ok(&["models", "validate", repo("models").to_str().unwrap()]);
    assert!(out.contains("6 model(s), 0 error(s)"), "{out}");
}

#[test]
fn broken_model_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"Info\": {}}").unwrap();
    let out = protoscope(&["models", "validate", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("error"));
}

#[test]
fn json_export_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = synth(dir.path(), &repo("manifests/four-devices.json"));
    let devmap = repo("manifests/four-devices.devmap.csv");
    let run = || ok(&["analyze", &pcap, "--devices", devmap.to_str().unwrap(), "--format", "json"]);
    let first = run();
    assert_eq!(first, run());
    let doc: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(doc["devices"].as_object().unwrap().len(), 4);
    assert_eq!(doc["totals"]["detected_flows"], 16);
}

#[test]
fn table_shows_nonstandard_port_counts() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = synth(dir.path(), &repo("manifests/four-devices.json"));
    let devmap = repo("manifests/four-devices.devmap.csv");
    let table = ok(&["analyze", &pcap, "--devices", devmap.to_str().unwrap()]);
    let camera = table.lines().find(|l| l.starts_with("camera")).unwrap();
    assert!(camera.contains("1 [+1]"), "{table}");
}

#[test]
fn fail_on_vulnerable_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = synth(dir.path(), &repo("manifests/rule-coverage.json"));
    assert_eq!(protoscope(&["analyze", &pcap, "--format", "csv"]).status.code(), Some(0));
    assert_eq!(protoscope(&["analyze", &pcap, "--fail-on-vulnerable", "--format", "csv"]).status.code(), Some(3));

    let clean = dir.path().join("clean.json");
    std::fs::write(
        &clean,
        r#"{"seed": 1, "flows": [{"client": "10.0.0.2:40000", "server": "10.0.0.1:123",
            "protocol": {"ntp": {"client_version": 4, "server": {"version": 4}}}}]}"#,
    )
    .unwrap();
    let clean_dir = dir.path().join("clean");
    std::fs::create_dir(&clean_dir).unwrap();
    let pcap = synth(&clean_dir, &clean);
    assert_eq!(protoscope(&["analyze", &pcap, "--fail-on-vulnerable"]).status.code(), Some(0));
}

#[test]
fn out_dir_holds_report_and_flows() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = synth(dir.path(), &repo("manifests/rule-coverage.json"));
    let out = dir.path().join("out");
    ok(&["analyze", &pcap, "--format", "csv", "--out", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("device,protocol,"));
    let flows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("flows.json")).unwrap()).unwrap();
    assert_eq!(flows["flows"].as_array().unwrap().len(), 25);
}

#[test]
fn credentials_are_redacted_unless_disabled() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = synth(dir.path(), &repo("manifests/rule-coverage.json"));
    let redacted = dir.path().join("a");
    let raw = dir.path().join("b");
    ok(&["analyze", &pcap, "--out", redacted.to_str().unwrap()]);
    ok(&["analyze", &pcap, "--redact-credentials", "false", "--out", raw.to_str().unwrap()]);
    let a = std::fs::read_to_string(redacted.join("flows.json")).unwrap();
    let b = std::fs::read_to_string(raw.join("flows.json")).unwrap();
    assert!(!a.contains("YWRtaW46MTIzNA==") && a.contains("\"redacted\""));
    assert!(b.contains("YWRtaW46MTIzNA=="));
}

#[test]
fn fingerprint_build_then_match_ranks_self_first() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = synth(dir.path(), &repo("manifests/four-devices.json"));
    let devmap = repo("manifests/four-devices.devmap.csv");
    let lib = dir.path().join("lib");
    std::fs::create_dir(&lib).unwrap();
    for d in ["camera", "frame", "plug", "speaker"] {
        let out = lib.join(format!("{d}.json"));
        ok(&["fingerprint", "build", &pcap, "--device", d, "--devices", devmap.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    }
    let text = ok(&["fingerprint", "match", &pcap, "--library", lib.to_str().unwrap(), "--devices", devmap.to_str().unwrap()]);
    for block in text.split_terminator("\n").collect::<Vec<_>>().chunks(5) {
        let device = block[0].trim_end_matches(':');
        assert!(block[1].contains(&format!("1. {device} ")), "{text}");
        assert!(block[1].contains("score 0.0000"), "{text}");
    }
}

#[test]
fn shipped_library_matches_four_device_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let pcap = synth(dir.path(), &repo("manifests/four-devices.json"));
    let devmap = repo("manifests/four-devices.devmap.csv");
    let text = ok(&["fingerprint", "match", &pcap, "--library", repo("fingerprints").to_str().unwrap(), "--devices", devmap.to_str().unwrap()]);
    assert_eq!(text.matches("score 0.0000").count(), 4, "{text}");
}

#[test]
fn seed_override_changes_capture_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let m = repo("manifests/four-devices.json");
    let a = dir.path().join("a.pcap");
    let b = dir.path().join("b.pcap");
    ok(&["synth", "--manifest", m.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    ok(&["--seed", "5", "synth", "--manifest", m.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
