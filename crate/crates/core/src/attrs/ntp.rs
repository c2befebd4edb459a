//! NTP header attributes.

use serde::{Deserialize, Serialize};

use super::{ExtractError, KnownProtocol};
use crate::flow::{Direction, Flow};

const NTP_HEADER_LEN: usize = 48;
const ORG_RANGE: std::ops::Range<usize> = 24..32;

/// The `LI:2 | VN:3 | Mode:3` first byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtpFirstByte {
    pub leap: u8,
    pub version: u8,
    pub mode: u8,
}

impl NtpFirstByte {
    pub fn decode(b: u8) -> Self {
        NtpFirstByte {
            leap: b >> 6,
            version: (b >> 3) & 0x07,
            mode: b & 0x07,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtpAttributes {
    pub client_version: u8,
    pub client_mode: u8,
    pub server_version: Option<u8>,
    pub server_mode: Option<u8>,
    /// Origin timestamp of the server reply is all zero.
    pub server_org_zero: Option<bool>,
}

pub fn extract_ntp(flow: &Flow) -> Result<NtpAttributes, ExtractError> {
    let fail = |r: &str| ExtractError::new(KnownProtocol::Ntp, r);
    if flow
        .packets
        .iter()
        .any(|fp| !fp.packet.payload.is_empty() && fp.packet.payload.len() < NTP_HEADER_LEN)
    {
        return Err(fail("packet shorter than the 48-byte NTP header"));
    }
    let req = flow.first_payload(Direction::Request);
    if req.is_empty() {
        return Err(fail("no request packet with payload"));
    }
    let client = NtpFirstByte::decode(req[0]);
    let resp = flow.first_payload(Direction::Response);
    let server = (!resp.is_empty()).then(|| NtpFirstByte::decode(resp[0]));
    Ok(NtpAttributes {
        client_version: client.version,
        client_mode: client.mode,
        server_version: server.map(|s| s.version),
        server_mode: server.map(|s| s.mode),
        server_org_zero: server.map(|_| resp[ORG_RANGE].iter().all(|&b| b == 0)),
    })
}
