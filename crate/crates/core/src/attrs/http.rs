//! HTTP request/response attributes, with pipelined exchanges paired by index.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExtractError, ExtractOptions, KnownProtocol, Version};
use crate::flow::{ordered_payload, Direction, Flow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthType {
    None,
    Basic,
    Digest,
    Bearer,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "form")]
pub enum Credential {
    Redacted { sha256: String, length: usize },
    Raw { value: String },
}

impl Credential {
    fn capture(value: &str, redact: bool) -> Self {
        if redact {
            Credential::Redacted {
                sha256: hex::encode(Sha256::digest(value.as_bytes())),
                length: value.len(),
            }
        } else {
            Credential::Raw {
                value: value.to_string(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpExchange {
    pub method: String,
    pub uri: String,
    /// `0.9` for a version-less request line.
    pub request_version: Version,
    pub host: Option<String>,
    pub user_agent: Option<String>,
    pub auth_type: AuthType,
    pub auth_credential: Option<Credential>,
    pub response_version: Option<Version>,
    pub status_code: Option<u16>,
    pub response_phrase: Option<String>,
    pub server_header: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpAttributes {
    pub exchanges: Vec<HttpExchange>,
}

struct RequestHead {
    method: String,
    uri: String,
    version: Version,
    headers: Vec<(String, String)>,
}

struct ResponseHead {
    version: Version,
    status: u16,
    phrase: String,
    headers: Vec<(String, String)>,
}

/// Returns the line starting at `pos` (without CR/LF) and the offset after it.
fn line_at(buf: &[u8], pos: usize) -> (&[u8], usize) {
    match buf[pos..].iter().position(|&b| b == b'\n') {
        Some(i) => {
            let line = &buf[pos..pos + i];
            (line.strip_suffix(b"\r").unwrap_or(line), pos + i + 1)
        }
        None => (&buf[pos..], buf.len()),
    }
}

fn parse_version(s: &str) -> Option<Version> {
    let rest = s.strip_prefix("HTTP/")?;
    let (a, b) = rest.split_once('.')?;
    if a.is_empty() || b.is_empty() || !a.bytes().chain(b.bytes()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(Version(a.parse().ok()?, b.parse().ok()?))
}

fn is_method(s: &str) -> bool {
    (1..=24).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_uppercase() || b == b'-' || b == b'_')
}

fn parse_request_line(line: &[u8]) -> Option<(String, String, Version)> {
    let s = std::str::from_utf8(line).ok()?;
    let mut parts = s.split(' ');
    let method = parts.next()?;
    let uri = parts.next()?;
    let version = match parts.next() {
        Some(v) => parse_version(v)?,
        None => Version(0, 9),
    };
    if parts.next().is_some() || !is_method(method) || uri.is_empty() {
        return None;
    }
    Some((method.to_string(), uri.to_string(), version))
}

fn parse_status_line(line: &[u8]) -> Option<(Version, u16, String)> {
    let s = String::from_utf8_lossy(line);
    let mut parts = s.splitn(3, ' ');
    let version = parse_version(parts.next()?)?;
    let code = parts.next()?;
    if code.len() != 3 || !code.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let status: u16 = code.parse().ok()?;
    if !(100..=599).contains(&status) {
        return None;
    }
    let phrase = parts.next().unwrap_or("").trim().to_string();
    Some((version, status, phrase))
}

/// Reads header lines from `pos` to the blank line. A stream that ends first
/// yields whatever headers were complete.
fn read_headers(buf: &[u8], mut pos: usize) -> (Vec<(String, String)>, usize) {
    let mut headers: Vec<(String, String)> = Vec::new();
    while pos < buf.len() {
        let (line, next) = line_at(buf, pos);
        pos = next;
        if line.is_empty() {
            break;
        }
        let text = String::from_utf8_lossy(line);
        if text.starts_with([' ', '\t']) {
            if let Some(last) = headers.last_mut() {
                last.1.push(' ');
                last.1.push_str(text.trim());
            }
            continue;
        }
        if let Some((name, value)) = text.split_once(':') {
            headers.push((name.trim().to_ascii_lowercase(), value.trim().to_string()));
        }
    }
    (headers, pos)
}

fn header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.as_str())
}

enum Body {
    Length(usize),
    Chunked,
    UntilNextMessage,
    None,
}

fn body_kind(headers: &[(String, String)], allows_body: bool) -> Body {
    if !allows_body {
        return Body::None;
    }
    if header(headers, "transfer-encoding").is_some_and(|v| v.to_ascii_lowercase().contains("chunked")) {
        return Body::Chunked;
    }
    match header(headers, "content-length").and_then(|v| v.parse::<usize>().ok()) {
        Some(n) => Body::Length(n),
        None => Body::UntilNextMessage,
    }
}

/// Offset after a chunked body, or `None` if the framing is broken.
fn skip_chunked(buf: &[u8], mut pos: usize) -> Option<usize> {
    loop {
        if pos >= buf.len() {
            return Some(buf.len());
        }
        let (line, next) = line_at(buf, pos);
        let text = std::str::from_utf8(line).ok()?;
        let size_txt = text.split(';').next()?.trim();
        let size = usize::from_str_radix(size_txt, 16).ok()?;
        if size == 0 {
            let (_, end) = read_headers(buf, next);
            return Some(end);
        }
        pos = next.checked_add(size)?.min(buf.len());
        let (_, after) = line_at(buf, pos);
        pos = after;
    }
}

fn skip_blank_lines(buf: &[u8], mut pos: usize) -> usize {
    while pos < buf.len() && (buf[pos] == b'\r' || buf[pos] == b'\n') {
        pos += 1;
    }
    pos
}

/// Next line start after `pos` whose line satisfies `ok`.
fn resync(buf: &[u8], pos: usize, ok: impl Fn(&[u8]) -> bool) -> Option<usize> {
    let mut i = pos;
    while let Some(off) = buf[i..].iter().position(|&b| b == b'\n') {
        i += off + 1;
        if i >= buf.len() {
            return None;
        }
        if ok(line_at(buf, i).0) {
            return Some(i);
        }
    }
    None
}

fn parse_requests(buf: &[u8]) -> Vec<RequestHead> {
    let is_req = |l: &[u8]| parse_request_line(l).is_some();
    let mut out = Vec::new();
    let mut pos = skip_blank_lines(buf, 0);
    while pos < buf.len() {
        let (line, next) = line_at(buf, pos);
        let Some((method, uri, version)) = parse_request_line(line) else {
            if out.is_empty() {
                break;
            }
            match resync(buf, pos, is_req) {
                Some(p) => {
                    pos = p;
                    continue;
                }
                None => break,
            }
        };
        if version == Version(0, 9) {
            out.push(RequestHead {
                method,
                uri,
                version,
                headers: Vec::new(),
            });
            pos = skip_blank_lines(buf, next);
            continue;
        }
        let (headers, end) = read_headers(buf, next);
        pos = match body_kind(&headers, true) {
            Body::Length(n) => end.saturating_add(n).min(buf.len()),
            Body::Chunked => skip_chunked(buf, end).unwrap_or(buf.len()),
            // A request without framing headers has no body.
            Body::UntilNextMessage | Body::None => end,
        };
        out.push(RequestHead {
            method,
            uri,
            version,
            headers,
        });
        pos = skip_blank_lines(buf, pos);
    }
    out
}

fn parse_responses(buf: &[u8], methods: &[&str]) -> Vec<ResponseHead> {
    let is_status = |l: &[u8]| parse_status_line(l).is_some();
    let mut out: Vec<ResponseHead> = Vec::new();
    let mut pos = skip_blank_lines(buf, 0);
    while pos < buf.len() {
        let (line, next) = line_at(buf, pos);
        let Some((version, status, phrase)) = parse_status_line(line) else {
            match resync(buf, pos, is_status) {
                Some(p) => {
                    pos = p;
                    continue;
                }
                None => break,
            }
        };
        let (headers, end) = read_headers(buf, next);
        let method = methods.get(out.len()).copied().unwrap_or("GET");
        let allows_body = method != "HEAD" && status >= 200 && status != 204 && status != 304;
        let interim = (100..200).contains(&status) && status != 101;
        pos = match body_kind(&headers, allows_body) {
            Body::Length(n) => end.saturating_add(n).min(buf.len()),
            Body::Chunked => skip_chunked(buf, end).unwrap_or(buf.len()),
            Body::UntilNextMessage => resync(buf, end.saturating_sub(1), is_status).unwrap_or(buf.len()),
            Body::None => end,
        };
        if !interim {
            out.push(ResponseHead {
                version,
                status,
                phrase,
                headers,
            });
        }
        if status == 101 {
            break;
        }
        pos = skip_blank_lines(buf, pos);
    }
    out
}

fn classify_auth(value: &str, redact: bool) -> (AuthType, Option<Credential>) {
    let value = value.trim();
    let (scheme, rest) = value.split_once(' ').unwrap_or((value, ""));
    let auth = match scheme.to_ascii_lowercase().as_str() {
        "basic" => AuthType::Basic,
        "digest" => AuthType::Digest,
        "bearer" => AuthType::Bearer,
        _ => AuthType::Other,
    };
    (auth, Some(Credential::capture(rest.trim(), redact)))
}

pub fn extract_http(flow: &Flow, opts: &ExtractOptions) -> Result<HttpAttributes, ExtractError> {
    let req_stream = ordered_payload(flow, Direction::Request).bytes;
    let requests = parse_requests(&req_stream);
    if requests.is_empty() {
        return Err(ExtractError::new(
            KnownProtocol::Http,
            "no parseable request line in the request stream",
        ));
    }
    let methods: Vec<&str> = requests.iter().map(|r| r.method.as_str()).collect();
    let resp_stream = ordered_payload(flow, Direction::Response).bytes;
    let mut responses = parse_responses(&resp_stream, &methods).into_iter();
    let exchanges = requests
        .iter()
        .map(|rq| {
            let (auth_type, auth_credential) = match header(&rq.headers, "authorization") {
                Some(v) => classify_auth(v, opts.redact_credentials),
                None => (AuthType::None, None),
            };
            let rs = responses.next();
            HttpExchange {
                method: rq.method.clone(),
                uri: rq.uri.clone(),
                request_version: rq.version,
                host: header(&rq.headers, "host").map(str::to_string),
                user_agent: header(&rq.headers, "user-agent").map(str::to_string),
                auth_type,
                auth_credential,
                response_version: rs.as_ref().map(|r| r.version),
                status_code: rs.as_ref().map(|r| r.status),
                response_phrase: rs.as_ref().map(|r| r.phrase.clone()),
                server_header: rs
                    .as_ref()
                    .and_then(|r| header(&r.headers, "server").map(str::to_string)),
            }
        })
        .collect();
    Ok(HttpAttributes { exchanges })
}
