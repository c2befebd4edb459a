//! Protocol data models: Info / Metadata / Contents documents.
//!
//! Models are stored as one JSON document per protocol. Parsing is two-step:
//! serde reads a closed-schema document, then it is converted to the domain
//! types here and validated.

mod document;
pub mod expr;
mod validate;

use std::fmt;
use std::path::{Path, PathBuf};

use regex::bytes::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use expr::{eval_boolean, EvalError, Expr, ExprError};
pub use validate::{validate_model, validate_model_set, Diagnostic, DiagnosticCode, Severity};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtocolModel {
    pub info: Info,
    pub metadata: Metadata,
    pub contents: Contents,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Info {
    pub abbreviation: String,
    pub standard_name: String,
    pub description: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metadata {
    pub ether_types: Vec<u16>,
    pub traffic_mode: TrafficModeHint,
    pub server_ports: Vec<ServerPort>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficModeHint {
    Unicast,
    Multicast,
    Broadcast,
    #[default]
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IpProto {
    #[serde(rename = "TCP", alias = "tcp")]
    Tcp,
    #[serde(rename = "UDP", alias = "udp")]
    Udp,
}

impl IpProto {
    pub fn number(self) -> u8 {
        match self {
            IpProto::Tcp => 6,
            IpProto::Udp => 17,
        }
    }

    pub fn from_number(n: u8) -> Option<IpProto> {
        match n {
            6 => Some(IpProto::Tcp),
            17 => Some(IpProto::Udp),
            _ => None,
        }
    }
}

impl fmt::Display for IpProto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IpProto::Tcp => "TCP",
            IpProto::Udp => "UDP",
        })
    }
}

/// `port` is wide so out-of-range values survive parsing and reach the validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ServerPort {
    pub ip_protocol: IpProto,
    pub port: u32,
}

impl fmt::Display for ServerPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.ip_protocol, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionName {
    Request,
    Response,
    Combined,
}

impl DirectionName {
    pub const ALL: [DirectionName; 3] = [
        DirectionName::Request,
        DirectionName::Response,
        DirectionName::Combined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DirectionName::Request => "request",
            DirectionName::Response => "response",
            DirectionName::Combined => "combined",
        }
    }

    pub fn from_name(s: &str) -> Option<DirectionName> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

impl fmt::Display for DirectionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Contents {
    pub request: Option<Section>,
    pub response: Option<Section>,
    pub combined: Option<Section>,
    pub select: Option<Expr>,
}

impl Contents {
    pub fn section(&self, d: DirectionName) -> Option<&Section> {
        match d {
            DirectionName::Request => self.request.as_ref(),
            DirectionName::Response => self.response.as_ref(),
            DirectionName::Combined => self.combined.as_ref(),
        }
    }

    pub fn present_directions(&self) -> Vec<DirectionName> {
        DirectionName::ALL
            .into_iter()
            .filter(|d| self.section(*d).is_some())
            .collect()
    }

    /// The declared `select`, or an OR over the present directions.
    pub fn effective_select(&self) -> Option<Expr> {
        self.select.clone().or_else(|| {
            Expr::any_of(
                self.present_directions()
                    .into_iter()
                    .map(|d| Expr::var(d.as_str())),
            )
        })
    }

    pub fn matchers(&self) -> impl Iterator<Item = &Matcher> {
        DirectionName::ALL
            .into_iter()
            .filter_map(|d| self.section(d))
            .flat_map(|s| s.matchers.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub matchers: Vec<Matcher>,
    pub eval: Option<Expr>,
}

impl Section {
    /// The declared `eval`, or an AND over every matcher. `None` means the
    /// section can never match.
    pub fn effective_eval(&self) -> Option<Expr> {
        self.eval
            .clone()
            .or_else(|| Expr::all_of(self.matchers.iter().map(|m| Expr::var(&m.id))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matcher {
    pub id: String,
    pub kind: MatcherKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatcherKind {
    String(RegexPattern),
    Byte(Vec<BytePattern>),
    Statistical(StatPattern),
}

impl MatcherKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            MatcherKind::String(_) => "string",
            MatcherKind::Byte(_) => "byte",
            MatcherKind::Statistical(_) => "statistical",
        }
    }
}

/// A byte-oriented regular expression. Compilation failures are kept rather
/// than raised so the validator can report them.
#[derive(Debug, Clone)]
pub struct RegexPattern {
    pub source: String,
    pub flags: String,
    compiled: Result<Regex, String>,
}

impl RegexPattern {
    pub fn new(source: impl Into<String>, flags: impl Into<String>) -> Self {
        let source = source.into();
        let flags = flags.into();
        let compiled = Self::compile(&source, &flags);
        RegexPattern {
            source,
            flags,
            compiled,
        }
    }

    fn compile(source: &str, flags: &str) -> Result<Regex, String> {
        let mut b = RegexBuilder::new(source);
        b.unicode(false);
        for c in flags.chars() {
            match c {
                'i' => b.case_insensitive(true),
                'm' => b.multi_line(true),
                's' => b.dot_matches_new_line(true),
                'x' => b.ignore_whitespace(true),
                other => return Err(format!("unknown regex flag {other:?}")),
            };
        }
        b.build().map_err(|e| e.to_string())
    }

    pub fn regex(&self) -> Option<&Regex> {
        self.compiled.as_ref().ok()
    }

    pub fn error(&self) -> Option<&str> {
        self.compiled.as_ref().err().map(String::as_str)
    }
}

impl PartialEq for RegexPattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source && self.flags == other.flags
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BytePattern {
    pub offset: usize,
    pub value: Vec<u8>,
    pub mask: Vec<u8>,
}

impl BytePattern {
    /// A pattern whose mask selects every bit of `value`.
    pub fn exact(offset: usize, value: Vec<u8>) -> Self {
        let mask = vec![0xff; value.len()];
        BytePattern {
            offset,
            value,
            mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PrintableRatio,
    PayloadLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Eq => lhs == rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ne => lhs != rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatPattern {
    pub metric: Metric,
    pub comparator: Comparator,
    pub threshold: f64,
}

/// Lower is more specific; used to rank competing detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Specificity {
    Byte,
    Regex,
    Statistical,
}

impl ProtocolModel {
    pub fn abbreviation(&self) -> &str {
        &self.info.abbreviation
    }

    pub fn specificity(&self) -> Specificity {
        let mut best = Specificity::Statistical;
        for m in self.contents.matchers() {
            let s = match m.kind {
                MatcherKind::Byte(_) => Specificity::Byte,
                MatcherKind::String(_) => Specificity::Regex,
                MatcherKind::Statistical(_) => Specificity::Statistical,
            };
            best = best.min(s);
        }
        best
    }

    pub fn to_json(&self) -> String {
        document::to_json(self)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{origin}parse error at line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}schema error: {message}")]
    Schema { origin: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ModelError {
    fn with_origin(self, path: &Path) -> Self {
        let o = format!("{}: ", path.display());
        match self {
            ModelError::Parse {
                line,
                column,
                message,
                ..
            } => ModelError::Parse {
                origin: o,
                line,
                column,
                message,
            },
            ModelError::Schema { message, .. } => ModelError::Schema { origin: o, message },
            e => e,
        }
    }

    pub(crate) fn schema(message: impl Into<String>) -> Self {
        ModelError::Schema {
            origin: String::new(),
            message: message.into(),
        }
    }
}

/// Parses and validates one model document. Error diagnostics become a
/// schema error; warnings are dropped (use [`validate_model`] to see them).
pub fn parse_model(text: &str) -> Result<ProtocolModel, ModelError> {
    let model = parse_model_unchecked(text)?;
    let errors: Vec<String> = validate_model(&model)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.to_string())
        .collect();
    if errors.is_empty() {
        Ok(model)
    } else {
        Err(ModelError::schema(errors.join("; ")))
    }
}

/// Parses without running the validator.
pub fn parse_model_unchecked(text: &str) -> Result<ProtocolModel, ModelError> {
    document::from_json(text)
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ProtocolModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text).map_err(|e| e.with_origin(path))
}

/// Loads every `*.json` in `dir` (sorted by file name) and checks the set
/// for duplicate abbreviations.
pub fn load_model_dir(dir: impl AsRef<Path>) -> Result<Vec<ProtocolModel>, ModelError> {
    let dir = dir.as_ref();
    let io_err = |source| ModelError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let models = paths
        .iter()
        .map(load_model_file)
        .collect::<Result<Vec<_>, _>>()?;
    check_set(&models)?;
    Ok(models)
}

fn check_set(models: &[ProtocolModel]) -> Result<(), ModelError> {
    let errors: Vec<String> = validate_model_set(models)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.to_string())
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ModelError::schema(errors.join("; ")))
    }
}

const BUILTIN_SOURCES: [(&str, &str); 6] = [
    ("dhcp.json", include_str!("../../../../models/dhcp.json")),
    ("dns.json", include_str!("../../../../models/dns.json")),
    ("http.json", include_str!("../../../../models/http.json")),
    ("ntp.json", include_str!("../../../../models/ntp.json")),
    ("ssdp.json", include_str!("../../../../models/ssdp.json")),
    ("tls.json", include_str!("../../../../models/tls.json")),
];

/// The six shipped models, compiled into the library.
pub fn builtin_models() -> Vec<ProtocolModel> {
    BUILTIN_SOURCES
        .iter()
        .map(|(name, src)| {
            parse_model(src).unwrap_or_else(|e| panic!("shipped model {name} is invalid: {e}"))
        })
        .collect()
}
