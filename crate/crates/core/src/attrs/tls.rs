//! TLS handshake attributes from ClientHello / ServerHello / Certificate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Cursor, ExtractError, KnownProtocol, Version};
use crate::flow::{ordered_payload, Direction, Flow};

const CT_HANDSHAKE: u8 = 22;
const HS_CLIENT_HELLO: u8 = 1;
const HS_SERVER_HELLO: u8 = 2;
const HS_CERTIFICATE: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TlsExtension {
    #[serde(rename = "type")]
    pub ext_type: u16,
    pub length: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TlsAnomaly {
    /// The server picked a suite the client never offered.
    SelectedCipherNotOffered {
        #[serde(with = "crate::hexfmt::code")]
        cipher: u16,
    },
    MalformedServerHello,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsAttributes {
    pub client_record_version: Version,
    pub client_hello_version: Version,
    #[serde(with = "crate::hexfmt::codes")]
    pub client_cipher_suites: Vec<u16>,
    pub client_extensions: Vec<TlsExtension>,
    /// Length of the whole extensions block (headers included).
    pub client_extensions_total: u32,
    pub server_record_version: Option<Version>,
    pub server_hello_version: Option<Version>,
    #[serde(with = "crate::hexfmt::opt_code")]
    pub server_selected_cipher: Option<u16>,
    pub server_extensions: Vec<TlsExtension>,
    pub certificate_seen: bool,
    pub anomalies: Vec<TlsAnomaly>,
}

impl TlsAttributes {
    pub fn client_extension_types(&self) -> Vec<u16> {
        self.client_extensions.iter().map(|e| e.ext_type).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cipher code 0 has no logarithm")]
pub struct UndefinedInput;

/// `log2` of the cipher code, the scale used for cipher-list plots.
pub fn cipher_plot_value(code: u16) -> Result<f64, UndefinedInput> {
    if code == 0 {
        return Err(UndefinedInput);
    }
    Ok((code as f64).log2())
}

struct Handshake {
    record_version: Option<Version>,
    messages: Vec<(u8, Vec<u8>)>,
}

/// Concatenates handshake record bodies up to the first non-handshake record
/// (ChangeCipherSpec, alert, application data) and splits them into messages.
fn handshake_messages(stream: &[u8]) -> Handshake {
    let mut c = Cursor::new(stream);
    let mut record_version = None;
    let mut buf = Vec::new();
    while c.remaining() >= 5 {
        let ct = c.u8().unwrap();
        let major = c.u8().unwrap();
        let minor = c.u8().unwrap();
        let len = c.u16().unwrap() as usize;
        if ct != CT_HANDSHAKE || major != 3 {
            break;
        }
        record_version.get_or_insert(Version(major, minor));
        let body = c.take(len.min(c.remaining())).unwrap_or_default();
        buf.extend_from_slice(body);
        if body.len() < len {
            break;
        }
    }
    let mut messages = Vec::new();
    let mut m = Cursor::new(&buf);
    while m.remaining() >= 4 {
        let t = m.u8().unwrap();
        let len = m.u24().unwrap() as usize;
        match m.take(len) {
            Some(body) => messages.push((t, body.to_vec())),
            None => break,
        }
    }
    Handshake {
        record_version,
        messages,
    }
}

struct Hello {
    version: Version,
    ciphers: Vec<u16>,
    extensions: Vec<TlsExtension>,
    extensions_total: u32,
}

fn parse_extensions(c: &mut Cursor<'_>) -> Option<(Vec<TlsExtension>, u32)> {
    if c.remaining() == 0 {
        return Some((Vec::new(), 0));
    }
    let total = c.u16()?;
    let block = c.take(total as usize)?;
    let mut e = Cursor::new(block);
    let mut out = Vec::new();
    while e.remaining() > 0 {
        let ext_type = e.u16()?;
        let length = e.u16()?;
        e.take(length as usize)?;
        out.push(TlsExtension { ext_type, length });
    }
    Some((out, total as u32))
}

fn parse_client_hello(body: &[u8]) -> Option<Hello> {
    let mut c = Cursor::new(body);
    let version = Version(c.u8()?, c.u8()?);
    c.take(32)?;
    let sid = c.u8()? as usize;
    c.take(sid)?;
    let cs_len = c.u16()? as usize;
    if !cs_len.is_multiple_of(2) {
        return None;
    }
    let cs = c.take(cs_len)?;
    let ciphers = cs
        .chunks_exact(2)
        .map(|p| u16::from_be_bytes([p[0], p[1]]))
        .collect();
    let comp = c.u8()? as usize;
    c.take(comp)?;
    let (extensions, extensions_total) = parse_extensions(&mut c)?;
    Some(Hello {
        version,
        ciphers,
        extensions,
        extensions_total,
    })
}

fn parse_server_hello(body: &[u8]) -> Option<Hello> {
    let mut c = Cursor::new(body);
    let version = Version(c.u8()?, c.u8()?);
    c.take(32)?;
    let sid = c.u8()? as usize;
    c.take(sid)?;
    let cipher = c.u16()?;
    c.u8()?;
    let (extensions, extensions_total) = parse_extensions(&mut c)?;
    Some(Hello {
        version,
        ciphers: vec![cipher],
        extensions,
        extensions_total,
    })
}

pub fn extract_tls(flow: &Flow) -> Result<TlsAttributes, ExtractError> {
    let fail = |r: &str| ExtractError::new(KnownProtocol::Tls, r);
    let client = handshake_messages(&ordered_payload(flow, Direction::Request).bytes);
    let (_, ch_body) = client
        .messages
        .iter()
        .find(|(t, _)| *t == HS_CLIENT_HELLO)
        .ok_or_else(|| fail("no ClientHello in the request stream"))?;
    let ch = parse_client_hello(ch_body).ok_or_else(|| fail("malformed ClientHello"))?;

    let server = handshake_messages(&ordered_payload(flow, Direction::Response).bytes);
    let mut attrs = TlsAttributes {
        client_record_version: client.record_version.unwrap_or(ch.version),
        client_hello_version: ch.version,
        client_cipher_suites: ch.ciphers,
        client_extensions: ch.extensions,
        client_extensions_total: ch.extensions_total,
        server_record_version: None,
        server_hello_version: None,
        server_selected_cipher: None,
        server_extensions: Vec::new(),
        certificate_seen: false,
        anomalies: Vec::new(),
    };
    for (t, body) in &server.messages {
        match *t {
            HS_SERVER_HELLO if attrs.server_hello_version.is_none() => match parse_server_hello(body) {
                Some(sh) => {
                    attrs.server_record_version = server.record_version;
                    attrs.server_hello_version = Some(sh.version);
                    attrs.server_selected_cipher = sh.ciphers.first().copied();
                    attrs.server_extensions = sh.extensions;
                }
                None => attrs.anomalies.push(TlsAnomaly::MalformedServerHello),
            },
            HS_CERTIFICATE => attrs.certificate_seen = true,
            _ => {}
        }
    }
    if let Some(sel) = attrs.server_selected_cipher {
        if !attrs.client_cipher_suites.contains(&sel) {
            attrs
                .anomalies
                .push(TlsAnomaly::SelectedCipherNotOffered { cipher: sel });
        }
    }
    Ok(attrs)
}
