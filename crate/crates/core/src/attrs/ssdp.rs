//! SSDP start-line and header attributes.

use serde::{Deserialize, Serialize};

use super::{ExtractError, KnownProtocol};
use crate::flow::{Direction, Flow};
use crate::packet_io::TrafficMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsdpKind {
    Notify,
    Msearch,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsdpAttributes {
    pub message_kind: SsdpKind,
    pub nt: Option<String>,
    pub nts: Option<String>,
    pub st: Option<String>,
    pub usn: Option<String>,
    pub server: Option<String>,
    /// IP TTL (hop limit) of the first request packet.
    pub ip_ttl: Option<u8>,
    pub multicast: bool,
}

fn kind_of(start_line: &str) -> Option<SsdpKind> {
    let upper = start_line.trim().to_ascii_uppercase();
    if upper.starts_with("NOTIFY * HTTP/1.") {
        Some(SsdpKind::Notify)
    } else if upper.starts_with("M-SEARCH * HTTP/1.") {
        Some(SsdpKind::Msearch)
    } else if upper.starts_with("HTTP/1.") && upper.split(' ').nth(1) == Some("200") {
        Some(SsdpKind::Response)
    } else {
        None
    }
}

pub(crate) fn parse_ssdp(payload: &[u8]) -> Result<SsdpAttributes, String> {
    let text = String::from_utf8_lossy(payload);
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let start = lines.next().unwrap_or("");
    let kind = kind_of(start).ok_or_else(|| format!("unrecognized start line {start:?}"))?;
    let mut attrs = SsdpAttributes {
        message_kind: kind,
        nt: None,
        nts: None,
        st: None,
        usn: None,
        server: None,
        ip_ttl: None,
        multicast: false,
    };
    for line in lines {
        if line.is_empty() {
            break;
        }
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let value = Some(value.trim().to_string());
        match name.trim().to_ascii_lowercase().as_str() {
            "nt" => attrs.nt = value,
            "nts" => attrs.nts = value,
            "st" => attrs.st = value,
            "usn" => attrs.usn = value,
            "server" => attrs.server = value,
            _ => {}
        }
    }
    let missing = match kind {
        SsdpKind::Notify if attrs.nts.is_none() => Some("NTS"),
        SsdpKind::Msearch | SsdpKind::Response if attrs.st.is_none() => Some("ST"),
        _ => None,
    };
    if let Some(h) = missing {
        return Err(format!("{kind:?} message lacks the mandatory {h} header"));
    }
    Ok(attrs)
}

pub fn extract_ssdp(flow: &Flow) -> Result<SsdpAttributes, ExtractError> {
    let payload = flow.first_payload(Direction::Request);
    let mut attrs = parse_ssdp(payload).map_err(|r| ExtractError::new(KnownProtocol::Ssdp, r))?;
    attrs.ip_ttl = flow.request_ip_ttl_first;
    attrs.multicast = flow.traffic_mode() == TrafficMode::Multicast;
    Ok(attrs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notify_headers_case_insensitive() {
        let a = parse_ssdp(b"NOTIFY * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nnts: ssdp:alive\r\nNt: upnp:rootdevice\r\n\r\n").unwrap();
        assert_eq!(a.message_kind, SsdpKind::Notify);
        assert_eq!(a.nts.as_deref(), Some("ssdp:alive"));
        assert_eq!(a.nt.as_deref(), Some("upnp:rootdevice"));
    }

    #[test]
    fn msearch_and_reply() {
        let a = parse_ssdp(b"M-SEARCH * HTTP/1.1\r\nST: ssdp:discover\r\nMAN: \"ssdp:discover\"\r\n\r\n").unwrap();
        assert_eq!(a.message_kind, SsdpKind::Msearch);
        assert_eq!(a.st.as_deref(), Some("ssdp:discover"));
        let r = parse_ssdp(b"HTTP/1.1 200 OK\r\nST: upnp:rootdevice\r\nUSN: uuid:1\r\n\r\n").unwrap();
        assert_eq!(r.message_kind, SsdpKind::Response);
        assert_eq!(r.usn.as_deref(), Some("uuid:1"));
    }

    #[test]
    fn bare_start_line_fails() {
        assert!(parse_ssdp(b"NOTIFY * HTTP/1.1\r\n\r\n").is_err());
        assert!(parse_ssdp(b"M-SEARCH * HTTP/1.1\r\n\r\n").is_err());
        assert!(parse_ssdp(b"GET / HTTP/1.1\r\n\r\n").is_err());
    }
}
