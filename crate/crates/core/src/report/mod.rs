//! Per-device aggregation of detections, findings, and fingerprints.

mod devmap;
mod render;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use devmap::{DeviceKey, DeviceMap, DeviceMapError, UNKNOWN_DEVICE};
pub use render::{export, import_json, render_table, ExportFormat};

use crate::attrs::KnownProtocol;
use crate::compliance::{CipherRegistry, Severity};
use crate::engine::Confidence;
use crate::fingerprint::{fingerprint_distance, DeviceFingerprint};
use crate::model::ProtocolModel;
use crate::pipeline::FlowResult;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VersionStamps {
    pub tool: String,
    /// Abbreviation to the first 16 hex digits of the model digest.
    pub models: BTreeMap<String, String>,
    pub cipher_snapshot: Option<String>,
    pub cipher_entries: usize,
}

impl VersionStamps {
    pub fn new(models: &[ProtocolModel], registry: &CipherRegistry) -> Self {
        VersionStamps {
            tool: TOOL_VERSION.to_string(),
            models: models
                .iter()
                .map(|m| (m.abbreviation().to_string(), m.digest()[..16].to_string()))
                .collect(),
            cipher_snapshot: registry.snapshot_date().map(String::from),
            cipher_entries: registry.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Marks {
    /// Fingerprint for this protocol differs from every other device in the run.
    pub unique: bool,
    pub secure: bool,
    pub vulnerable: bool,
    pub caution: bool,
}

impl Marks {
    pub fn symbols(&self) -> String {
        let mut s = String::new();
        for (on, c) in [(self.unique, '*'), (self.secure, '+'), (self.vulnerable, '-'), (self.caution, '†')] {
            if on {
                s.push(c);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProtocolCell {
    pub standard_port_flows: usize,
    pub nonstandard_port_flows: usize,
    /// Included in the two counts above.
    pub partial_flows: usize,
    pub findings: BTreeMap<String, usize>,
    pub marks: Marks,
}

impl ProtocolCell {
    pub fn total(&self) -> usize {
        self.standard_port_flows + self.nonstandard_port_flows
    }

    fn merge(&mut self, other: &ProtocolCell) {
        self.standard_port_flows += other.standard_port_flows;
        self.nonstandard_port_flows += other.nonstandard_port_flows;
        self.partial_flows += other.partial_flows;
        for (k, v) in &other.findings {
            *self.findings.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FingerprintSummary {
    pub tls_cipher_lists: usize,
    pub tls_extension_profiles: usize,
    pub http_user_agents: usize,
    pub http_hosts: usize,
    pub dhcp_param_lists: usize,
    pub unique_within_run: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeviceReport {
    pub flows: usize,
    pub undetected_flows: usize,
    pub protocols: BTreeMap<String, ProtocolCell>,
    pub fingerprint: FingerprintSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub flows: usize,
    pub detected_flows: usize,
    pub partial_flows: usize,
    pub protocols: BTreeMap<String, ProtocolCell>,
    pub findings_by_severity: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportDocument {
    pub versions: VersionStamps,
    pub devices: BTreeMap<String, DeviceReport>,
    pub totals: Totals,
}

impl ReportDocument {
    /// Sum of all cell counts; equals the number of detected flows.
    pub fn cell_flow_count(&self) -> usize {
        self.devices
            .values()
            .flat_map(|d| d.protocols.values())
            .map(ProtocolCell::total)
            .sum()
    }

    pub fn has_vulnerable(&self) -> bool {
        self.totals
            .findings_by_severity
            .get(Severity::Vulnerable.to_string().as_str())
            .is_some_and(|&n| n > 0)
    }
}

fn device_of<'a>(f: &FlowResult, devmap: &'a DeviceMap) -> &'a str {
    devmap.attribute(f.client, f.client_mac, f.server, f.server_mac)
}

/// One fingerprint per mapped device, built from its flows' attributes.
pub fn device_fingerprints(flows: &[FlowResult], devmap: &DeviceMap) -> Vec<DeviceFingerprint> {
    let mut by_device: BTreeMap<&str, DeviceFingerprint> = BTreeMap::new();
    for f in flows {
        let dev = device_of(f, devmap);
        if dev == UNKNOWN_DEVICE {
            continue;
        }
        let fp = by_device.entry(dev).or_insert_with(|| DeviceFingerprint::new(dev));
        if let Some(a) = &f.attributes {
            fp.add(a);
        }
    }
    by_device.into_values().collect()
}

/// Restricts a fingerprint to the dimensions a protocol contributes.
fn project(fp: &DeviceFingerprint, p: KnownProtocol) -> Option<DeviceFingerprint> {
    let mut out = DeviceFingerprint::new(fp.device_id.clone());
    match p {
        KnownProtocol::Tls => {
            out.tls_cipher_lists = fp.tls_cipher_lists.clone();
            out.tls_extension_profiles = fp.tls_extension_profiles.clone();
        }
        KnownProtocol::Http => {
            out.http_methods = fp.http_methods.clone();
            out.http_hosts = fp.http_hosts.clone();
            out.http_uris = fp.http_uris.clone();
            out.http_user_agents = fp.http_user_agents.clone();
            out.http_servers = fp.http_servers.clone();
        }
        KnownProtocol::Dhcp => out.dhcp_param_lists = fp.dhcp_param_lists.clone(),
        _ => return None,
    }
    (!out.is_empty()).then_some(out)
}

fn unique_among(me: &DeviceFingerprint, all: &[DeviceFingerprint]) -> bool {
    all.iter()
        .filter(|o| o.device_id != me.device_id)
        .all(|o| fingerprint_distance(me, o).map_or(true, |d| d > 0.0))
}

pub fn aggregate(
    flows: &[FlowResult],
    fingerprints: &[DeviceFingerprint],
    devmap: &DeviceMap,
    versions: VersionStamps,
) -> ReportDocument {
    let mut doc = ReportDocument {
        versions,
        ..Default::default()
    };
    for f in flows {
        let dev = doc.devices.entry(device_of(f, devmap).to_string()).or_default();
        dev.flows += 1;
        doc.totals.flows += 1;
        let Some(d) = f.primary() else {
            dev.undetected_flows += 1;
            continue;
        };
        doc.totals.detected_flows += 1;
        let cell = dev.protocols.entry(d.protocol.clone()).or_default();
        if d.port_hint_agreed {
            cell.standard_port_flows += 1;
        } else {
            cell.nonstandard_port_flows += 1;
        }
        if d.confidence == Confidence::Partial {
            cell.partial_flows += 1;
            doc.totals.partial_flows += 1;
        }
        for finding in &f.findings {
            *cell.findings.entry(finding.rule_id.to_string()).or_default() += 1;
            match finding.severity {
                Severity::Vulnerable => cell.marks.vulnerable = true,
                Severity::Caution => cell.marks.caution = true,
                Severity::Info => {}
            }
            *doc.totals
                .findings_by_severity
                .entry(finding.severity.to_string())
                .or_default() += 1;
        }
    }

    let projections: BTreeMap<KnownProtocol, Vec<DeviceFingerprint>> = KnownProtocol::ALL
        .into_iter()
        .map(|p| (p, fingerprints.iter().filter_map(|fp| project(fp, p)).collect()))
        .collect();
    for (id, dev) in doc.devices.iter_mut() {
        let fp = fingerprints.iter().find(|fp| &fp.device_id == id);
        if let Some(fp) = fp {
            dev.fingerprint = FingerprintSummary {
                tls_cipher_lists: fp.tls_cipher_lists.len(),
                tls_extension_profiles: fp.tls_extension_profiles.len(),
                http_user_agents: fp.http_user_agents.len(),
                http_hosts: fp.http_hosts.len(),
                dhcp_param_lists: fp.dhcp_param_lists.len(),
                unique_within_run: !fp.is_empty() && unique_among(fp, fingerprints),
            };
        }
        for (proto, cell) in dev.protocols.iter_mut() {
            let full = cell.total() > cell.partial_flows;
            cell.marks.secure = full && !cell.marks.vulnerable && !cell.marks.caution;
            let Some(known) = KnownProtocol::from_abbreviation(proto) else {
                continue;
            };
            let mine = fp.and_then(|fp| project(fp, known));
            cell.marks.unique = mine.is_some_and(|m| unique_among(&m, &projections[&known]));
        }
    }
    for dev in doc.devices.values() {
        for (proto, cell) in &dev.protocols {
            doc.totals.protocols.entry(proto.clone()).or_default().merge(cell);
        }
    }
    doc
}
