//! Best-practice audits over extracted attributes.

mod registry;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use registry::{CategoryCounts, CipherCategory, CipherRegistry, RegistryError};

use crate::attrs::{
    AttributeBundle, AuthType, HttpAttributes, HttpExchange, KnownProtocol, NtpAttributes,
    SsdpAttributes, SsdpKind, TlsAttributes, Version,
};
use crate::engine::{Confidence, Detection};
use crate::flow::FlowId;
use crate::hexfmt::fmt_code;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Vulnerable,
    Caution,
    Info,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Vulnerable => "vulnerable",
            Severity::Caution => "caution",
            Severity::Info => "info",
        })
    }
}

macro_rules! rules {
    ($( $variant:ident => $id:literal, $sev:ident, $weight:literal, $desc:literal; )*) => {
        /// Registered audit rules.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum RuleId { $( $variant, )* }

        impl RuleId {
            pub const ALL: &'static [RuleId] = &[ $( RuleId::$variant, )* ];

            pub fn as_str(self) -> &'static str {
                match self { $( RuleId::$variant => $id, )* }
            }

            pub fn severity(self) -> Severity {
                match self { $( RuleId::$variant => Severity::$sev, )* }
            }

            /// Relative risk used when summarizing findings.
            pub fn weight(self) -> f64 {
                match self { $( RuleId::$variant => $weight, )* }
            }

            pub fn description(self) -> &'static str {
                match self { $( RuleId::$variant => $desc, )* }
            }
        }
    };
}

rules! {
    TlsClientVersionDeprecated => "TLS.CLIENT_VERSION_DEPRECATED", Vulnerable, 1.0,
        "ClientHello version is below TLS 1.2";
    TlsServerVersionDeprecated => "TLS.SERVER_VERSION_DEPRECATED", Vulnerable, 1.0,
        "ServerHello version is below TLS 1.2";
    TlsClientOffersWeak => "TLS.CLIENT_OFFERS_WEAK", Caution, 0.5,
        "client offers at least one weak cipher suite";
    TlsClientOffersInsecure => "TLS.CLIENT_OFFERS_INSECURE", Vulnerable, 1.0,
        "client offers at least one insecure cipher suite";
    TlsServerSelectedWeak => "TLS.SERVER_SELECTED_WEAK", Vulnerable, 1.0,
        "server selected a weak cipher suite";
    TlsServerSelectedInsecure => "TLS.SERVER_SELECTED_INSECURE", Vulnerable, 1.0,
        "server selected an insecure cipher suite";
    TlsServerSelectedUnknown => "TLS.SERVER_SELECTED_UNKNOWN", Info, 0.0,
        "server selected a cipher suite missing from the registry";
    HttpVersionObsolete => "HTTP.VERSION_OBSOLETE", Vulnerable, 1.0,
        "request or response uses HTTP/1.0 or older";
    HttpBasicAuth => "HTTP.BASIC_AUTH", Vulnerable, 1.0,
        "request carries Basic authentication";
    HttpPlaintextCredential => "HTTP.PLAINTEXT_CREDENTIAL", Caution, 0.5,
        "credential sent with a scheme other than Digest";
    NtpClientOldVersion => "NTP.CLIENT_OLD_VERSION", Vulnerable, 1.0,
        "client NTP version is older than 4";
    NtpServerOldVersion => "NTP.SERVER_OLD_VERSION", Vulnerable, 0.5,
        "server NTP version is older than 4";
    NtpBadModes => "NTP.BAD_MODES", Caution, 0.5,
        "modes are not client=3 / server=4";
    NtpZeroOrg => "NTP.ZERO_ORG", Vulnerable, 1.0,
        "server reply has an all-zero origin timestamp";
    SsdpBadNts => "SSDP.BAD_NTS", Caution, 0.5,
        "NOTIFY sub-type is not one of the accepted values";
    SsdpBadSt => "SSDP.BAD_ST", Caution, 0.5,
        "M-SEARCH search target is not ssdp:discover";
    SsdpTtlExcessive => "SSDP.TTL_EXCESSIVE", Vulnerable, 1.0,
        "multicast request IP TTL is above 2";
    TlsPartialMatch => "TLS.PARTIAL_MATCH", Info, 0.0,
        "TLS signature matched but attributes could not be extracted";
    HttpPartialMatch => "HTTP.PARTIAL_MATCH", Info, 0.0,
        "HTTP signature matched but attributes could not be extracted";
    DnsPartialMatch => "DNS.PARTIAL_MATCH", Info, 0.0,
        "DNS signature matched but attributes could not be extracted";
    NtpPartialMatch => "NTP.PARTIAL_MATCH", Info, 0.0,
        "NTP signature matched but attributes could not be extracted";
    DhcpPartialMatch => "DHCP.PARTIAL_MATCH", Info, 0.0,
        "DHCP signature matched but attributes could not be extracted";
    SsdpPartialMatch => "SSDP.PARTIAL_MATCH", Info, 0.0,
        "SSDP signature matched but attributes could not be extracted";
}

impl RuleId {
    pub fn partial_match(p: KnownProtocol) -> RuleId {
        match p {
            KnownProtocol::Tls => RuleId::TlsPartialMatch,
            KnownProtocol::Http => RuleId::HttpPartialMatch,
            KnownProtocol::Dns => RuleId::DnsPartialMatch,
            KnownProtocol::Ntp => RuleId::NtpPartialMatch,
            KnownProtocol::Dhcp => RuleId::DhcpPartialMatch,
            KnownProtocol::Ssdp => RuleId::SsdpPartialMatch,
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown rule id {0:?}")]
pub struct UnknownRule(pub String);

impl FromStr for RuleId {
    type Err = UnknownRule;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RuleId::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| UnknownRule(s.to_string()))
    }
}

impl Serialize for RuleId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RuleId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// A rule hit before it is tied to a flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub rule_id: RuleId,
    pub detail: String,
    pub evidence: BTreeMap<String, String>,
}

impl Finding {
    fn new(rule_id: RuleId, detail: impl Into<String>) -> Self {
        Finding {
            rule_id,
            detail: detail.into(),
            evidence: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.evidence.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceFinding {
    pub flow_id: FlowId,
    pub protocol: String,
    pub rule_id: RuleId,
    pub severity: Severity,
    pub detail: String,
    pub evidence: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplianceError {
    #[error("internal error: {detection} detection paired with {attributes} attributes")]
    ProtocolMismatch {
        detection: String,
        attributes: KnownProtocol,
    },
    #[error("internal error: full {0} detection has no attributes")]
    MissingAttributes(String),
}

fn offered_list(codes: &[u16]) -> String {
    codes.iter().map(|&c| fmt_code(c)).collect::<Vec<_>>().join(" ")
}

pub fn check_tls(a: &TlsAttributes, r: &CipherRegistry) -> Vec<Finding> {
    let mut out = Vec::new();
    if a.client_hello_version < Version::TLS1_2 {
        out.push(
            Finding::new(
                RuleId::TlsClientVersionDeprecated,
                format!("ClientHello offers {}", a.client_hello_version.tls_name()),
            )
            .with("client_hello_version", a.client_hello_version.tls_name()),
        );
    }
    if let Some(v) = a.server_hello_version {
        if v < Version::TLS1_2 {
            out.push(
                Finding::new(
                    RuleId::TlsServerVersionDeprecated,
                    format!("server chose {}", v.tls_name()),
                )
                .with("server_hello_version", v.tls_name()),
            );
        }
    }
    let by_cat = |cat: CipherCategory| -> Vec<u16> {
        a.client_cipher_suites
            .iter()
            .copied()
            .filter(|&c| r.lookup(c) == cat)
            .collect()
    };
    let weak = by_cat(CipherCategory::Weak);
    if !weak.is_empty() {
        out.push(
            Finding::new(
                RuleId::TlsClientOffersWeak,
                format!("client offers {} weak suite(s)", weak.len()),
            )
            .with("weak_offered", offered_list(&weak)),
        );
    }
    let insecure = by_cat(CipherCategory::Insecure);
    if !insecure.is_empty() {
        out.push(
            Finding::new(
                RuleId::TlsClientOffersInsecure,
                format!("client offers {} insecure suite(s)", insecure.len()),
            )
            .with("insecure_offered", offered_list(&insecure)),
        );
    }
    if let Some(sel) = a.server_selected_cipher {
        let rule = match r.lookup(sel) {
            CipherCategory::Weak => Some(RuleId::TlsServerSelectedWeak),
            CipherCategory::Insecure => Some(RuleId::TlsServerSelectedInsecure),
            CipherCategory::Unknown => Some(RuleId::TlsServerSelectedUnknown),
            CipherCategory::Secure | CipherCategory::Recommended => None,
        };
        if let Some(rule) = rule {
            out.push(
                Finding::new(rule, format!("server selected {}", fmt_code(sel)))
                    .with("server_selected_cipher", fmt_code(sel))
                    .with("category", r.lookup(sel).as_str()),
            );
        }
    }
    out
}

pub fn check_http_exchange(e: &HttpExchange) -> Vec<Finding> {
    let mut out = Vec::new();
    let obsolete = |v: Version| v <= Version(1, 0);
    if obsolete(e.request_version) || e.response_version.is_some_and(obsolete) {
        let v = match e.response_version {
            Some(rv) if obsolete(rv) && !obsolete(e.request_version) => rv,
            _ => e.request_version,
        };
        let detail = if v == Version(0, 9) {
            "request uses the deprecated HTTP/0.9".to_string()
        } else {
            format!("HTTP/{v} in use; HTTP/1.1 or later is expected")
        };
        out.push(
            Finding::new(RuleId::HttpVersionObsolete, detail)
                .with("version", v.to_string())
                .with("uri", e.uri.clone()),
        );
    }
    if e.auth_type == AuthType::Basic {
        out.push(
            Finding::new(RuleId::HttpBasicAuth, format!("{} {} uses Basic auth", e.method, e.uri))
                .with("method", e.method.clone())
                .with("uri", e.uri.clone()),
        );
    }
    if e.auth_credential.is_some() && e.auth_type != AuthType::Digest {
        out.push(
            Finding::new(
                RuleId::HttpPlaintextCredential,
                format!("credential sent with {:?} scheme", e.auth_type).to_lowercase(),
            )
            .with("auth_type", format!("{:?}", e.auth_type).to_lowercase()),
        );
    }
    out
}

pub fn check_http(a: &HttpAttributes) -> Vec<Finding> {
    let mut out: Vec<Finding> = Vec::new();
    for e in &a.exchanges {
        for f in check_http_exchange(e) {
            match out.iter_mut().find(|x| x.rule_id == f.rule_id) {
                // HTTP/0.9 is the more specific report; let it win.
                Some(x) if f.evidence.get("version").is_some_and(|v| v == "0.9") => *x = f,
                Some(_) => {}
                None => out.push(f),
            }
        }
    }
    out
}

pub fn check_ntp(a: &NtpAttributes) -> Vec<Finding> {
    let mut out = Vec::new();
    if a.client_version < 4 {
        out.push(
            Finding::new(RuleId::NtpClientOldVersion, format!("client uses NTPv{}", a.client_version))
                .with("client_version", a.client_version.to_string()),
        );
    }
    if let Some(v) = a.server_version.filter(|&v| v < 4) {
        out.push(
            Finding::new(RuleId::NtpServerOldVersion, format!("server replies with NTPv{v}"))
                .with("server_version", v.to_string()),
        );
    }
    let server_mode_bad = a.server_mode.is_some_and(|m| m != 4);
    if a.client_mode != 3 || server_mode_bad {
        let mut f = Finding::new(
            RuleId::NtpBadModes,
            format!(
                "client mode {}, server mode {}",
                a.client_mode,
                a.server_mode.map_or("-".to_string(), |m| m.to_string())
            ),
        )
        .with("client_mode", a.client_mode.to_string());
        if let Some(m) = a.server_mode {
            f = f.with("server_mode", m.to_string());
        }
        out.push(f);
    }
    if a.server_org_zero == Some(true) {
        out.push(Finding::new(RuleId::NtpZeroOrg, "server reply origin timestamp is zero"));
    }
    out
}

pub const ACCEPTED_NTS: [&str; 4] = ["ssdp:alive", "ssdp:byebye", "ssdp:update", "upnp:propchange"];
pub const EXPECTED_ST: &str = "ssdp:discover";
pub const MAX_SSDP_TTL: u8 = 2;

pub fn check_ssdp(a: &SsdpAttributes) -> Vec<Finding> {
    let mut out = Vec::new();
    if a.message_kind == SsdpKind::Notify {
        let nts = a.nts.as_deref().unwrap_or("");
        if !ACCEPTED_NTS.iter().any(|ok| ok.eq_ignore_ascii_case(nts)) {
            out.push(Finding::new(RuleId::SsdpBadNts, format!("NTS is {nts:?}")).with("nts", nts));
        }
    }
    if a.message_kind == SsdpKind::Msearch {
        let st = a.st.as_deref().unwrap_or("");
        if !st.eq_ignore_ascii_case(EXPECTED_ST) {
            out.push(Finding::new(RuleId::SsdpBadSt, format!("ST is {st:?}")).with("st", st));
        }
    }
    let is_request = matches!(a.message_kind, SsdpKind::Notify | SsdpKind::Msearch);
    if let Some(ttl) = a.ip_ttl {
        if is_request && a.multicast && ttl > MAX_SSDP_TTL {
            out.push(
                Finding::new(RuleId::SsdpTtlExcessive, format!("multicast request sent with TTL {ttl}"))
                    .with("ip_ttl", ttl.to_string()),
            );
        }
    }
    out
}

/// Runs the checker for the detection's protocol. Partial detections yield a
/// single `<PROTO>.PARTIAL_MATCH` finding.
pub fn check_flow(
    d: &Detection,
    attrs: Option<&AttributeBundle>,
    r: &CipherRegistry,
) -> Result<Vec<ComplianceFinding>, ComplianceError> {
    let Some(proto) = KnownProtocol::from_abbreviation(&d.protocol) else {
        return Ok(Vec::new());
    };
    let findings = if d.confidence == Confidence::Partial {
        vec![Finding::new(
            RuleId::partial_match(proto),
            format!("{proto} signature matched without the expected attributes"),
        )]
    } else {
        let a = attrs.ok_or_else(|| ComplianceError::MissingAttributes(d.protocol.clone()))?;
        if a.protocol() != proto {
            return Err(ComplianceError::ProtocolMismatch {
                detection: d.protocol.clone(),
                attributes: a.protocol(),
            });
        }
        match a {
            AttributeBundle::Tls(t) => check_tls(t, r),
            AttributeBundle::Http(h) => check_http(h),
            AttributeBundle::Ntp(n) => check_ntp(n),
            AttributeBundle::Ssdp(s) => check_ssdp(s),
            AttributeBundle::Dns(_) | AttributeBundle::Dhcp(_) => Vec::new(),
        }
    };
    let mut seen = std::collections::BTreeSet::new();
    Ok(findings
        .into_iter()
        .filter(|f| seen.insert(f.rule_id))
        .map(|f| ComplianceFinding {
            flow_id: d.flow_id,
            protocol: proto.abbreviation().to_string(),
            severity: f.rule_id.severity(),
            rule_id: f.rule_id,
            detail: f.detail,
            evidence: f.evidence,
        })
        .collect())
}
