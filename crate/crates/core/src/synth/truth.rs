//! Expected outcomes for generated flows, computed from the specs alone.

use std::net::SocketAddr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::spec::{AuthScheme, FlowSpec, Manifest, ProtocolSpec, SsdpKindSpec, TlsSpec};
use crate::compliance::{CipherCategory, CipherRegistry};
use crate::engine::Confidence;
use crate::hexfmt::fmt_code;
use crate::model::IpProto;

/// Responder ports treated as standard for each protocol.
pub const STANDARD_PORTS: &[(&str, IpProto, u16)] = &[
    ("TLS", IpProto::Tcp, 443),
    ("HTTP", IpProto::Tcp, 80),
    ("HTTP", IpProto::Tcp, 8008),
    ("HTTP", IpProto::Tcp, 8080),
    ("HTTP", IpProto::Tcp, 8888),
    ("DNS", IpProto::Udp, 53),
    ("DNS", IpProto::Tcp, 53),
    ("NTP", IpProto::Udp, 123),
    ("DHCP", IpProto::Udp, 67),
    ("DHCP", IpProto::Udp, 68),
    ("SSDP", IpProto::Udp, 1900),
];

const HTTP_METHODS: [&str; 9] = ["GET", "POST", "PUT", "HEAD", "OPTIONS", "DELETE", "PATCH", "CONNECT", "TRACE"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    pub client: SocketAddr,
    pub server: SocketAddr,
    pub transport: IpProto,
    pub expected_protocol: Option<String>,
    pub expected_confidence: Option<Confidence>,
    pub standard_port: bool,
    /// Subset of the extracted attribute object that must match exactly.
    pub expected_attributes: Value,
    /// Sorted rule ids.
    pub expected_rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn find(&self, client: SocketAddr, server: SocketAddr, transport: IpProto) -> Option<&TruthEntry> {
        self.entries
            .iter()
            .find(|e| e.client == client && e.server == server && e.transport == transport)
    }
}

pub fn ground_truth(manifest: &Manifest, registry: &CipherRegistry) -> GroundTruth {
    GroundTruth {
        seed: manifest.seed,
        entries: manifest
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| truth_entry(i, f, registry))
            .collect(),
    }
}

fn expected_label(spec: &FlowSpec) -> Option<(&'static str, Confidence)> {
    let full = Confidence::Full;
    match &spec.protocol {
        ProtocolSpec::Tls(_) => Some(("TLS", full)),
        ProtocolSpec::Http(h) => {
            (HTTP_METHODS.contains(&h.method.as_str()) || h.response.is_some()).then_some(("HTTP", full))
        }
        ProtocolSpec::Dns(_) => Some(("DNS", full)),
        ProtocolSpec::Ntp(n) => {
            let s = n.server?;
            let ok = (1..=4).contains(&n.client_version)
                && (1..=4).contains(&s.version)
                && matches!(n.client_mode, 1 | 3)
                && matches!(s.mode, 2 | 4);
            ok.then_some(("NTP", full))
        }
        ProtocolSpec::Dhcp(d) => d.cookie_ok.then_some(("DHCP", full)),
        ProtocolSpec::Ssdp(s) => {
            let has_mandatory = match s.kind {
                SsdpKindSpec::Notify => s.nts.is_some(),
                SsdpKindSpec::Msearch | SsdpKindSpec::Response => s.st.is_some(),
            };
            Some(("SSDP", if has_mandatory { full } else { Confidence::Partial }))
        }
        ProtocolSpec::Raw(_) => None,
    }
}

fn truth_entry(index: usize, spec: &FlowSpec, registry: &CipherRegistry) -> TruthEntry {
    let label = expected_label(spec);
    let transport = spec.transport();
    let standard_port = label.is_some_and(|(p, _)| {
        STANDARD_PORTS
            .iter()
            .any(|&(sp, proto, port)| sp == p && proto == transport && port == spec.server.port())
    });
    let (attributes, mut rules) = match label {
        Some((p, Confidence::Partial)) => (Value::Null, vec![format!("{p}.PARTIAL_MATCH")]),
        Some(_) => (expected_attributes(spec), expected_rules(spec, registry)),
        None => (Value::Null, Vec::new()),
    };
    rules.sort();
    rules.dedup();
    TruthEntry {
        index,
        device: spec.device.clone(),
        client: spec.client,
        server: spec.server,
        transport,
        expected_protocol: label.map(|(p, _)| p.to_string()),
        expected_confidence: label.map(|(_, c)| c),
        standard_port,
        expected_attributes: attributes,
        expected_rules: rules,
    }
}

fn v(x: crate::attrs::Version) -> Value {
    json!([x.0, x.1])
}

fn expected_attributes(spec: &FlowSpec) -> Value {
    match &spec.protocol {
        ProtocolSpec::Tls(t) => {
            let total: u32 = t.extensions.iter().map(|e| 4 + u32::from(e.length)).sum();
            let mut o = json!({
                "client_record_version": v(t.record_version),
                "client_hello_version": v(t.client_version),
                "client_cipher_suites": t.ciphers.iter().map(|&c| fmt_code(c)).collect::<Vec<_>>(),
                "client_extensions_total": total,
            });
            if let Some(s) = &t.server {
                o["server_hello_version"] = v(s.version);
                o["server_selected_cipher"] = json!(fmt_code(s.cipher));
                o["certificate_seen"] = json!(s.certificate);
            }
            o
        }
        ProtocolSpec::Http(h) => {
            let mut e = json!({
                "method": h.method,
                "uri": h.uri,
                "request_version": v(h.version.unwrap_or(crate::attrs::Version(0, 9))),
                "host": h.host,
                "user_agent": h.user_agent,
                "auth_type": h.auth.as_ref().map_or("none", |a| match a.scheme {
                    AuthScheme::Basic => "basic",
                    AuthScheme::Digest => "digest",
                    AuthScheme::Bearer => "bearer",
                }),
            });
            if let Some(r) = &h.response {
                e["response_version"] = v(r.version);
                e["status_code"] = json!(r.status);
                e["server_header"] = json!(r.server);
            }
            json!({ "exchanges": [e] })
        }
        ProtocolSpec::Dns(d) => {
            let mut o = json!({
                "transaction_id": d.id,
                "query_names": [d.qname.trim_end_matches('.')],
                "query_types": [d.qtype],
            });
            if let Some(rc) = d.rcode {
                o["response_code"] = json!(rc);
            }
            o
        }
        ProtocolSpec::Ntp(n) => {
            let s = n.server.expect("labelled NTP flows have a server reply");
            json!({
                "client_version": n.client_version,
                "client_mode": n.client_mode,
                "server_version": s.version,
                "server_mode": s.mode,
                "server_org_zero": s.org_zero,
            })
        }
        ProtocolSpec::Dhcp(d) => json!({
            "op": "request",
            "transaction_id": d.xid,
            "magic_cookie_ok": true,
            "message_type": d.message_type,
            "parameter_request_list": d.params,
            "requested_hostname": d.hostname,
        }),
        ProtocolSpec::Ssdp(s) => {
            let mode_multicast = match spec.server.ip() {
                std::net::IpAddr::V4(a) => a.is_multicast(),
                std::net::IpAddr::V6(a) => a.is_multicast(),
            };
            json!({
                "message_kind": match s.kind {
                    SsdpKindSpec::Notify => "notify",
                    SsdpKindSpec::Msearch => "msearch",
                    SsdpKindSpec::Response => "response",
                },
                "nt": s.nt, "nts": s.nts, "st": s.st, "usn": s.usn, "server": s.server,
                "ip_ttl": spec.ip_ttl,
                "multicast": mode_multicast,
            })
        }
        ProtocolSpec::Raw(_) => Value::Null,
    }
}

fn tls_rules(t: &TlsSpec, r: &CipherRegistry) -> Vec<String> {
    let below_1_2 = |x: crate::attrs::Version| (x.0, x.1) < (3, 3);
    let mut out = Vec::new();
    if below_1_2(t.client_version) {
        out.push("TLS.CLIENT_VERSION_DEPRECATED");
    }
    if t.ciphers.iter().any(|&c| r.lookup(c) == CipherCategory::Weak) {
        out.push("TLS.CLIENT_OFFERS_WEAK");
    }
    if t.ciphers.iter().any(|&c| r.lookup(c) == CipherCategory::Insecure) {
        out.push("TLS.CLIENT_OFFERS_INSECURE");
    }
    if let Some(s) = &t.server {
        if below_1_2(s.version) {
            out.push("TLS.SERVER_VERSION_DEPRECATED");
        }
        match r.lookup(s.cipher) {
            CipherCategory::Weak => out.push("TLS.SERVER_SELECTED_WEAK"),
            CipherCategory::Insecure => out.push("TLS.SERVER_SELECTED_INSECURE"),
            CipherCategory::Unknown => out.push("TLS.SERVER_SELECTED_UNKNOWN"),
            _ => {}
        }
    }
    out.into_iter().map(String::from).collect()
}

fn expected_rules(spec: &FlowSpec, registry: &CipherRegistry) -> Vec<String> {
    let mut out: Vec<&str> = Vec::new();
    match &spec.protocol {
        ProtocolSpec::Tls(t) => return tls_rules(t, registry),
        ProtocolSpec::Http(h) => {
            let old = |x: crate::attrs::Version| (x.0, x.1) <= (1, 0);
            if h.version.is_none_or(old) || h.response.as_ref().is_some_and(|r| old(r.version)) {
                out.push("HTTP.VERSION_OBSOLETE");
            }
            if let Some(a) = h.auth.as_ref().filter(|_| h.version.is_some()) {
                if a.scheme == AuthScheme::Basic {
                    out.push("HTTP.BASIC_AUTH");
                }
                if a.scheme != AuthScheme::Digest {
                    out.push("HTTP.PLAINTEXT_CREDENTIAL");
                }
            }
        }
        ProtocolSpec::Ntp(n) => {
            if n.client_version < 4 {
                out.push("NTP.CLIENT_OLD_VERSION");
            }
            if let Some(s) = n.server {
                if s.version < 4 {
                    out.push("NTP.SERVER_OLD_VERSION");
                }
                if n.client_mode != 3 || s.mode != 4 {
                    out.push("NTP.BAD_MODES");
                }
                if s.org_zero {
                    out.push("NTP.ZERO_ORG");
                }
            }
        }
        ProtocolSpec::Ssdp(s) => {
            let accepted = ["ssdp:alive", "ssdp:byebye", "ssdp:update", "upnp:propchange"];
            if s.kind == SsdpKindSpec::Notify && !s.nts.as_deref().is_some_and(|x| accepted.contains(&x)) {
                out.push("SSDP.BAD_NTS");
            }
            if s.kind == SsdpKindSpec::Msearch && s.st.as_deref() != Some("ssdp:discover") {
                out.push("SSDP.BAD_ST");
            }
            let multicast = match spec.server.ip() {
                std::net::IpAddr::V4(a) => a.is_multicast(),
                std::net::IpAddr::V6(a) => a.is_multicast(),
            };
            if s.kind != SsdpKindSpec::Response && multicast && spec.ip_ttl > 2 {
                out.push("SSDP.TTL_EXCESSIVE");
            }
        }
        ProtocolSpec::Dns(_) | ProtocolSpec::Dhcp(_) | ProtocolSpec::Raw(_) => {}
    }
    out.into_iter().map(String::from).collect()
}

/// True when every key in `expected` appears in `actual` with an equal
/// value. Objects recurse; arrays must have equal length and match
/// element-wise.
pub fn json_subset(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) => e
            .iter()
            .all(|(k, ev)| a.get(k).is_some_and(|av| json_subset(ev, av))),
        (Value::Array(e), Value::Array(a)) => {
            e.len() == a.len() && e.iter().zip(a).all(|(x, y)| json_subset(x, y))
        }
        _ => expected == actual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_semantics() {
        let a = json!({"x": 1, "y": [{"a": 1, "b": 2}], "z": null});
        assert!(json_subset(&json!({"y": [{"a": 1}]}), &a));
        assert!(json_subset(&json!({"z": null}), &a));
        assert!(!json_subset(&json!({"y": []}), &a));
        assert!(!json_subset(&json!({"w": 1}), &a));
    }
}
