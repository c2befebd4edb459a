mod common;

use std::path::PathBuf;

use common::*;
use protoscope::report::{aggregate, device_fingerprints, export, import_json, render_table, DeviceMap, ExportFormat, VersionStamps};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against the stored file; `UPDATE_GOLDEN=1` rewrites it.
fn check(name: &str, actual: &[u8]) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}; run with UPDATE_GOLDEN=1", path.display()));
    assert!(
        expected == actual,
        "{name} differs from golden file\n--- actual ---\n{}",
        String::from_utf8_lossy(actual)
    );
}

fn four_device_report() -> protoscope::report::ReportDocument {
    let reg = full_registry();
    let c = corpus("manifests/four-devices.json", &reg);
    let a = analyze(&c, &reg);
    let devmap = DeviceMap::load(&repo_path("manifests/four-devices.devmap.csv")).unwrap();
    let fps = device_fingerprints(&a.flows, &devmap);
    let mut versions = VersionStamps::new(&models(), &reg);
    versions.tool = "golden".into();
    aggregate(&a.flows, &fps, &devmap, versions)
}

#[test]
fn four_device_table() {
    check("four-devices.table.txt", render_table(&four_device_report()).as_bytes());
}

#[test]
fn four_device_json() {
    let r = four_device_report();
    let json = export(&r, ExportFormat::Json);
    assert_eq!(import_json(&json).unwrap(), r);
    check("four-devices.report.json", &json);
}

#[test]
fn four_device_csv() {
    let r = four_device_report();
    let csv = export(&r, ExportFormat::Csv);
    let cells: usize = r.devices.values().map(|d| d.protocols.values().filter(|c| c.total() > 0).count()).sum();
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), cells + 1);
    check("four-devices.report.csv", &csv);
}

#[test]
fn rule_coverage_table() {
    let reg = subset_registry();
    let c = corpus("manifests/rule-coverage.json", &reg);
    let a = analyze(&c, &reg);
    let r = aggregate(&a.flows, &[], &DeviceMap::new(), VersionStamps::default());
    check("rule-coverage.table.txt", render_table(&r).as_bytes());
}

#[test]
fn ground_truth_file() {
    let c = corpus("manifests/rule-coverage.json", &subset_registry());
    check("rule-coverage.truth.json", (serde_json::to_string_pretty(&c.truth).unwrap() + "\n").as_bytes());
}
