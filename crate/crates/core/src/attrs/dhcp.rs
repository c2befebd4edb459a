//! DHCP (BOOTP) fixed fields and options.

use serde::{Deserialize, Serialize};

use super::{ExtractError, KnownProtocol};
use crate::flow::{Direction, Flow};

pub const MAGIC_COOKIE: [u8; 4] = [0x63, 0x82, 0x53, 0x63];
const OPTIONS_OFFSET: usize = 240;

const OPT_PAD: u8 = 0;
const OPT_HOSTNAME: u8 = 12;
const OPT_MESSAGE_TYPE: u8 = 53;
const OPT_PARAM_REQUEST: u8 = 55;
const OPT_END: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DhcpOp {
    Request,
    Reply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DhcpAttributes {
    pub op: DhcpOp,
    pub transaction_id: u32,
    pub magic_cookie_ok: bool,
    pub message_type: Option<u8>,
    pub parameter_request_list: Vec<u8>,
    pub requested_hostname: Option<String>,
}

pub(crate) fn parse_dhcp(p: &[u8]) -> Result<DhcpAttributes, String> {
    if p.len() < OPTIONS_OFFSET {
        return Err(format!("{} bytes is shorter than the 240-byte header", p.len()));
    }
    let op = match p[0] {
        1 => DhcpOp::Request,
        2 => DhcpOp::Reply,
        other => return Err(format!("unknown op {other}")),
    };
    let magic_cookie_ok = p[236..240] == MAGIC_COOKIE;
    let mut attrs = DhcpAttributes {
        op,
        transaction_id: u32::from_be_bytes([p[4], p[5], p[6], p[7]]),
        magic_cookie_ok,
        message_type: None,
        parameter_request_list: Vec::new(),
        requested_hostname: None,
    };
    if !magic_cookie_ok {
        return Ok(attrs);
    }
    let mut i = OPTIONS_OFFSET;
    while i < p.len() {
        let code = p[i];
        if code == OPT_END {
            break;
        }
        if code == OPT_PAD {
            i += 1;
            continue;
        }
        let Some(&len) = p.get(i + 1) else { break };
        let Some(data) = p.get(i + 2..i + 2 + len as usize) else {
            break;
        };
        match code {
            OPT_MESSAGE_TYPE if !data.is_empty() => attrs.message_type = Some(data[0]),
            OPT_PARAM_REQUEST => attrs.parameter_request_list = data.to_vec(),
            OPT_HOSTNAME => attrs.requested_hostname = Some(String::from_utf8_lossy(data).into_owned()),
            _ => {}
        }
        i += 2 + len as usize;
    }
    Ok(attrs)
}

/// Reads the first request-direction packet.
pub fn extract_dhcp(flow: &Flow) -> Result<DhcpAttributes, ExtractError> {
    let p = flow.first_payload(Direction::Request);
    let p = if p.is_empty() {
        flow.first_payload(Direction::Response)
    } else {
        p
    };
    parse_dhcp(p).map_err(|r| ExtractError::new(KnownProtocol::Dhcp, r))
}
