//! Manifest and flow-spec documents.

use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use crate::attrs::Version;
use crate::model::IpProto;
use crate::packet_io::MacAddr;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Seeds TCP initial sequence numbers and TLS random fields.
    #[serde(default)]
    pub seed: u64,
    pub flows: Vec<FlowSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub client: SocketAddr,
    pub server: SocketAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_mac: Option<MacAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_mac: Option<MacAddr>,
    /// TTL (hop limit) on client packets.
    #[serde(default = "default_ttl")]
    pub ip_ttl: u8,
    #[serde(default)]
    pub start_offset_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(default)]
    pub segmentation: Segmentation,
    pub protocol: ProtocolSpec,
}

fn default_ttl() -> u8 {
    64
}

impl FlowSpec {
    pub fn new(client: SocketAddr, server: SocketAddr, protocol: ProtocolSpec) -> Self {
        FlowSpec {
            client,
            server,
            client_mac: None,
            server_mac: None,
            ip_ttl: default_ttl(),
            start_offset_ms: 0,
            device: None,
            segmentation: Segmentation::Single,
            protocol,
        }
    }

    pub fn transport(&self) -> IpProto {
        self.protocol.transport()
    }
}

/// How TCP payload is cut into segments. UDP messages are always one
/// datagram each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    /// Segments of up to [`MSS`](super::MSS) bytes.
    #[default]
    Single,
    PerByte,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolSpec {
    Tls(TlsSpec),
    Http(HttpSpec),
    Dns(DnsSpec),
    Ntp(NtpSpec),
    Dhcp(DhcpSpec),
    Ssdp(SsdpSpec),
    Raw(RawSpec),
}

impl ProtocolSpec {
    pub fn transport(&self) -> IpProto {
        match self {
            ProtocolSpec::Tls(_) | ProtocolSpec::Http(_) => IpProto::Tcp,
            ProtocolSpec::Dns(d) if d.tcp => IpProto::Tcp,
            ProtocolSpec::Dns(_) | ProtocolSpec::Ntp(_) | ProtocolSpec::Dhcp(_) | ProtocolSpec::Ssdp(_) => {
                IpProto::Udp
            }
            ProtocolSpec::Raw(r) => r.transport,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::Tls(_) => "tls",
            ProtocolSpec::Http(_) => "http",
            ProtocolSpec::Dns(_) => "dns",
            ProtocolSpec::Ntp(_) => "ntp",
            ProtocolSpec::Dhcp(_) => "dhcp",
            ProtocolSpec::Ssdp(_) => "ssdp",
            ProtocolSpec::Raw(_) => "raw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtSpec {
    #[serde(rename = "type", with = "crate::hexfmt::code")]
    pub ext_type: u16,
    pub length: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsSpec {
    #[serde(default = "tls_record_default")]
    pub record_version: Version,
    pub client_version: Version,
    #[serde(with = "crate::hexfmt::codes")]
    pub ciphers: Vec<u16>,
    #[serde(default = "default_extensions")]
    pub extensions: Vec<ExtSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<TlsServerSpec>,
}

fn tls_record_default() -> Version {
    Version(3, 1)
}

pub fn default_extensions() -> Vec<ExtSpec> {
    [(0x0000, 14), (0x000a, 8), (0x000b, 2), (0x000d, 20), (0x0017, 0), (0xff01, 1)]
        .into_iter()
        .map(|(ext_type, length)| ExtSpec { ext_type, length })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsServerSpec {
    pub version: Version,
    #[serde(with = "crate::hexfmt::code")]
    pub cipher: u16,
    #[serde(default)]
    pub extensions: Vec<ExtSpec>,
    #[serde(default = "yes")]
    pub certificate: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthScheme {
    Basic,
    Digest,
    Bearer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpAuthSpec {
    pub scheme: AuthScheme,
    pub credential: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSpec {
    pub method: String,
    pub uri: String,
    /// `None` sends an HTTP/0.9 simple request.
    #[serde(default)]
    pub version: Option<Version>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_agent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<HttpAuthSpec>,
    #[serde(default)]
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<HttpResponseSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpResponseSpec {
    pub version: Version,
    pub status: u16,
    #[serde(default = "ok_phrase")]
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
    #[serde(default)]
    pub body: String,
}

fn ok_phrase() -> String {
    "OK".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsSpec {
    pub qname: String,
    #[serde(default = "qtype_a")]
    pub qtype: u16,
    #[serde(default)]
    pub id: u16,
    #[serde(default)]
    pub tcp: bool,
    /// Response code of the answer; `None` sends the query alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rcode: Option<u8>,
}

fn qtype_a() -> u16 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtpSpec {
    pub client_version: u8,
    #[serde(default = "mode_client")]
    pub client_mode: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<NtpServerSpec>,
}

fn mode_client() -> u8 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtpServerSpec {
    pub version: u8,
    #[serde(default = "mode_server")]
    pub mode: u8,
    #[serde(default)]
    pub org_zero: bool,
}

fn mode_server() -> u8 {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhcpSpec {
    #[serde(default = "dhcp_discover")]
    pub message_type: u8,
    #[serde(default)]
    pub params: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hostname: Option<String>,
    #[serde(default)]
    pub xid: u32,
    #[serde(default = "yes")]
    pub cookie_ok: bool,
    /// Message type of the server reply, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<u8>,
}

fn dhcp_discover() -> u8 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsdpKindSpec {
    Notify,
    Msearch,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsdpSpec {
    pub kind: SsdpKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nts: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub st: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawBytes {
    Text(String),
    Hex(String),
}

impl RawBytes {
    pub fn to_bytes(&self) -> Result<Vec<u8>, String> {
        match self {
            RawBytes::Text(t) => Ok(t.as_bytes().to_vec()),
            RawBytes::Hex(h) => {
                let compact: String = h.chars().filter(|c| !c.is_whitespace()).collect();
                hex::decode(compact).map_err(|e| format!("bad hex payload: {e}"))
            }
        }
    }
}

/// Arbitrary payloads, used for cross-protocol negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSpec {
    pub transport: IpProto,
    pub request: RawBytes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<RawBytes>,
}
