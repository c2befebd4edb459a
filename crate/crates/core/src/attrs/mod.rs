//! Per-protocol attribute extraction from detected flows.

pub mod dhcp;
pub mod dns;
pub mod http;
pub mod ntp;
pub mod ssdp;
pub mod tls;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::Flow;

pub use dhcp::{DhcpAttributes, DhcpOp};
pub use dns::{DnsAttributes, DnsMessageInfo};
pub use http::{AuthType, Credential, HttpAttributes, HttpExchange};
pub use ntp::{NtpAttributes, NtpFirstByte};
pub use ssdp::{SsdpAttributes, SsdpKind};
pub use tls::{cipher_plot_value, TlsAnomaly, TlsAttributes, TlsExtension, UndefinedInput};

/// A `(major, minor)` protocol version as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version(pub u8, pub u8);

impl Version {
    pub const TLS1_2: Version = Version(3, 3);
    pub const HTTP1_1: Version = Version(1, 1);

    pub fn major(self) -> u8 {
        self.0
    }

    pub fn minor(self) -> u8 {
        self.1
    }

    /// Human name for a TLS/SSL wire version, e.g. `TLS1.2`.
    pub fn tls_name(self) -> String {
        match (self.0, self.1) {
            (2, 0) => "SSL2.0".into(),
            (3, 0) => "SSL3.0".into(),
            (3, m) => format!("TLS1.{}", m.saturating_sub(1)),
            (a, b) => format!("0x{a:02x}{b:02x}"),
        }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0, self.1)
    }
}

/// The protocols with a built-in attribute extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KnownProtocol {
    #[serde(rename = "TLS")]
    Tls,
    #[serde(rename = "HTTP")]
    Http,
    #[serde(rename = "DNS")]
    Dns,
    #[serde(rename = "NTP")]
    Ntp,
    #[serde(rename = "DHCP")]
    Dhcp,
    #[serde(rename = "SSDP")]
    Ssdp,
}

impl KnownProtocol {
    pub const ALL: [KnownProtocol; 6] = [
        KnownProtocol::Dhcp,
        KnownProtocol::Dns,
        KnownProtocol::Http,
        KnownProtocol::Ntp,
        KnownProtocol::Ssdp,
        KnownProtocol::Tls,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            KnownProtocol::Tls => "TLS",
            KnownProtocol::Http => "HTTP",
            KnownProtocol::Dns => "DNS",
            KnownProtocol::Ntp => "NTP",
            KnownProtocol::Dhcp => "DHCP",
            KnownProtocol::Ssdp => "SSDP",
        }
    }

    pub fn from_abbreviation(s: &str) -> Option<KnownProtocol> {
        Self::ALL
            .into_iter()
            .find(|p| p.abbreviation().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for KnownProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "protocol", content = "attributes")]
pub enum AttributeBundle {
    #[serde(rename = "TLS")]
    Tls(TlsAttributes),
    #[serde(rename = "HTTP")]
    Http(HttpAttributes),
    #[serde(rename = "DNS")]
    Dns(DnsAttributes),
    #[serde(rename = "NTP")]
    Ntp(NtpAttributes),
    #[serde(rename = "DHCP")]
    Dhcp(DhcpAttributes),
    #[serde(rename = "SSDP")]
    Ssdp(SsdpAttributes),
}

impl AttributeBundle {
    pub fn protocol(&self) -> KnownProtocol {
        match self {
            AttributeBundle::Tls(_) => KnownProtocol::Tls,
            AttributeBundle::Http(_) => KnownProtocol::Http,
            AttributeBundle::Dns(_) => KnownProtocol::Dns,
            AttributeBundle::Ntp(_) => KnownProtocol::Ntp,
            AttributeBundle::Dhcp(_) => KnownProtocol::Dhcp,
            AttributeBundle::Ssdp(_) => KnownProtocol::Ssdp,
        }
    }

    /// The attribute object without the protocol tag.
    pub fn attributes_json(&self) -> serde_json::Value {
        let v = match self {
            AttributeBundle::Tls(a) => serde_json::to_value(a),
            AttributeBundle::Http(a) => serde_json::to_value(a),
            AttributeBundle::Dns(a) => serde_json::to_value(a),
            AttributeBundle::Ntp(a) => serde_json::to_value(a),
            AttributeBundle::Dhcp(a) => serde_json::to_value(a),
            AttributeBundle::Ssdp(a) => serde_json::to_value(a),
        };
        v.expect("attribute bundles always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{protocol} attribute extraction failed: {reason}")]
pub struct ExtractError {
    pub protocol: KnownProtocol,
    pub reason: String,
}

impl ExtractError {
    pub(crate) fn new(protocol: KnownProtocol, reason: impl Into<String>) -> Self {
        ExtractError {
            protocol,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    /// Store HTTP credentials as a digest and length instead of raw text.
    pub redact_credentials: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            redact_credentials: true,
        }
    }
}

pub fn extract(
    protocol: KnownProtocol,
    flow: &Flow,
    opts: &ExtractOptions,
) -> Result<AttributeBundle, ExtractError> {
    Ok(match protocol {
        KnownProtocol::Tls => AttributeBundle::Tls(tls::extract_tls(flow)?),
        KnownProtocol::Http => AttributeBundle::Http(http::extract_http(flow, opts)?),
        KnownProtocol::Dns => AttributeBundle::Dns(dns::extract_dns(flow)?),
        KnownProtocol::Ntp => AttributeBundle::Ntp(ntp::extract_ntp(flow)?),
        KnownProtocol::Dhcp => AttributeBundle::Dhcp(dhcp::extract_dhcp(flow)?),
        KnownProtocol::Ssdp => AttributeBundle::Ssdp(ssdp::extract_ssdp(flow)?),
    })
}

/// Bounds-checked big-endian reader shared by the binary extractors.
pub(crate) struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.data.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u24(&mut self) -> Option<u32> {
        self.take(3)
            .map(|b| u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }
}
