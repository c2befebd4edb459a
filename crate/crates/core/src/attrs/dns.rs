//! DNS header and question-section attributes.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Cursor, ExtractError, KnownProtocol};
use crate::flow::{ordered_payload, Direction, Flow};

const MAX_NAME_LEN: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsMessageInfo {
    pub transaction_id: u16,
    pub is_response: bool,
    pub opcode: u8,
    pub rcode: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsAttributes {
    /// Id of the first message in the flow.
    pub transaction_id: u16,
    pub messages: Vec<DnsMessageInfo>,
    pub query_names: Vec<String>,
    pub query_types: Vec<u16>,
    /// RCODE of the first response, when one was seen.
    pub response_code: Option<u8>,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum NameError {
    Truncated,
    PointerLoop,
    BadLabelType,
    TooLong,
}

/// Decodes a possibly compressed name starting at `pos`. Returns the name and
/// the offset just past it in the original message.
pub(crate) fn read_name(msg: &[u8], start: usize) -> Result<(String, usize), NameError> {
    let mut labels: Vec<String> = Vec::new();
    let mut visited = HashSet::new();
    let mut pos = start;
    let mut resume: Option<usize> = None;
    let mut total = 0usize;
    loop {
        let len = *msg.get(pos).ok_or(NameError::Truncated)? as usize;
        match len & 0xc0 {
            0x00 if len == 0 => {
                let end = resume.unwrap_or(pos + 1);
                let name = if labels.is_empty() {
                    ".".to_string()
                } else {
                    labels.join(".")
                };
                return Ok((name, end));
            }
            0x00 => {
                let label = msg.get(pos + 1..pos + 1 + len).ok_or(NameError::Truncated)?;
                total += len + 1;
                if total > MAX_NAME_LEN {
                    return Err(NameError::TooLong);
                }
                labels.push(escape_label(label));
                pos += 1 + len;
            }
            0xc0 => {
                let lo = *msg.get(pos + 1).ok_or(NameError::Truncated)? as usize;
                let target = ((len & 0x3f) << 8) | lo;
                if !visited.insert(target) {
                    return Err(NameError::PointerLoop);
                }
                resume.get_or_insert(pos + 2);
                pos = target;
            }
            _ => return Err(NameError::BadLabelType),
        }
    }
}

fn escape_label(label: &[u8]) -> String {
    let mut s = String::with_capacity(label.len());
    for &b in label {
        match b {
            b'.' | b'\\' => {
                s.push('\\');
                s.push(b as char);
            }
            0x21..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\{b:03}")),
        }
    }
    s
}

struct Message {
    info: DnsMessageInfo,
    questions: Vec<(String, u16)>,
}

fn parse_message(msg: &[u8]) -> Result<Message, String> {
    let mut c = Cursor::new(msg);
    let short = || "message shorter than the 12-byte header".to_string();
    let id = c.u16().ok_or_else(short)?;
    let flags = c.u16().ok_or_else(short)?;
    let qdcount = c.u16().ok_or_else(short)?;
    c.take(6).ok_or_else(short)?;
    let mut pos = 12;
    let mut questions = Vec::new();
    for _ in 0..qdcount {
        let (name, next) = read_name(msg, pos).map_err(|e| format!("bad question name: {e:?}"))?;
        let tail = msg.get(next..next + 4).ok_or("question truncated")?;
        questions.push((name, u16::from_be_bytes([tail[0], tail[1]])));
        pos = next + 4;
    }
    Ok(Message {
        info: DnsMessageInfo {
            transaction_id: id,
            is_response: flags & 0x8000 != 0,
            opcode: ((flags >> 11) & 0x0f) as u8,
            rcode: (flags & 0x000f) as u8,
        },
        questions,
    })
}

fn split_tcp_messages(stream: &[u8]) -> Vec<&[u8]> {
    let mut out = Vec::new();
    let mut c = Cursor::new(stream);
    while let Some(len) = c.u16() {
        match c.take(len as usize) {
            Some(m) => out.push(m),
            None => break,
        }
    }
    out
}

pub fn extract_dns(flow: &Flow) -> Result<DnsAttributes, ExtractError> {
    let fail = |r: String| ExtractError::new(KnownProtocol::Dns, r);
    let raw: Vec<Vec<u8>> = if flow.is_tcp() {
        [Direction::Request, Direction::Response]
            .into_iter()
            .flat_map(|d| {
                let s = ordered_payload(flow, d).bytes;
                split_tcp_messages(&s).into_iter().map(<[u8]>::to_vec).collect::<Vec<_>>()
            })
            .collect()
    } else {
        flow.packets
            .iter()
            .filter(|fp| !fp.packet.payload.is_empty())
            .map(|fp| fp.packet.payload.clone())
            .collect()
    };
    let messages = raw
        .iter()
        .map(|m| parse_message(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let first = messages
        .first()
        .ok_or_else(|| fail("no DNS message in the flow".into()))?;
    let questions = messages
        .iter()
        .find(|m| !m.questions.is_empty())
        .map(|m| m.questions.clone())
        .unwrap_or_default();
    Ok(DnsAttributes {
        transaction_id: first.info.transaction_id,
        response_code: messages
            .iter()
            .find(|m| m.info.is_response)
            .map(|m| m.info.rcode),
        messages: messages.iter().map(|m| m.info).collect(),
        query_names: questions.iter().map(|q| q.0.clone()).collect(),
        query_types: questions.iter().map(|q| q.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(id: u16, flags: u16, name: &str, qtype: u16) -> Vec<u8> {
        let mut m = id.to_be_bytes().to_vec();
        m.extend_from_slice(&flags.to_be_bytes());
        m.extend_from_slice(&[0, 1, 0, 0, 0, 0, 0, 0]);
        for label in name.split('.') {
            m.push(label.len() as u8);
            m.extend_from_slice(label.as_bytes());
        }
        m.push(0);
        m.extend_from_slice(&qtype.to_be_bytes());
        m.extend_from_slice(&[0, 1]);
        m
    }

    #[test]
    fn decodes_question() {
        let m = parse_message(&query(0x1234, 0x0100, "example.com", 1)).unwrap();
        assert_eq!(m.questions, [("example.com".to_string(), 1)]);
        assert!(!m.info.is_response);
        assert_eq!(m.info.transaction_id, 0x1234);
    }

    #[test]
    fn response_code() {
        let m = parse_message(&query(1, 0x8183, "nx.example", 1)).unwrap();
        assert!(m.info.is_response);
        assert_eq!(m.info.rcode, 3);
    }

    #[test]
    fn compression_pointer_is_followed() {
        let mut m = query(1, 0, "example.com", 1);
        // second name: "www" + pointer to offset 12
        let at = m.len();
        m.extend_from_slice(&[3, b'w', b'w', b'w', 0xc0, 12]);
        assert_eq!(read_name(&m, at), Ok(("www.example.com".into(), at + 6)));
    }

    #[test]
    fn pointer_loop_is_rejected() {
        let mut m = vec![0u8; 12];
        m.extend_from_slice(&[0xc0, 14, 0xc0, 12]);
        assert_eq!(read_name(&m, 12), Err(NameError::PointerLoop));
        let mut self_ref = vec![0u8; 12];
        self_ref.extend_from_slice(&[0xc0, 12]);
        assert_eq!(read_name(&self_ref, 12), Err(NameError::PointerLoop));
    }

    #[test]
    fn bad_inputs() {
        assert_eq!(read_name(&[5, b'a'], 0), Err(NameError::Truncated));
        assert_eq!(read_name(&[0x40], 0), Err(NameError::BadLabelType));
        assert_eq!(read_name(&[0], 0), Ok((".".into(), 1)));
        let mut long = Vec::new();
        for _ in 0..5 {
            long.push(63);
            long.extend_from_slice(&[b'a'; 63]);
        }
        long.push(0);
        assert_eq!(read_name(&long, 0), Err(NameError::TooLong));
        assert!(parse_message(&[0; 11]).is_err());
    }

    #[test]
    fn tcp_framing() {
        let q = query(7, 0, "a.b", 28);
        let mut s = (q.len() as u16).to_be_bytes().to_vec();
        s.extend_from_slice(&q);
        s.extend_from_slice(&[0, 50, 1]);
        assert_eq!(split_tcp_messages(&s), vec![&q[..]]);
    }
}
