use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::{DirectionName, MatcherKind, Metric, ProtocolModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One code per model invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DiagnosticCode {
    EmptyAbbreviation,
    DuplicateMatcherId,
    MaskLengthMismatch,
    InvalidRegex,
    UnknownEvalId,
    UnknownSelectDirection,
    PortOutOfRange,
    DuplicateAbbreviation,
    InvalidThreshold,
    EmptyBytePattern,
    NoServerPorts,
    NoContentSignature,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::EmptyAbbreviation => "E001",
            DiagnosticCode::DuplicateMatcherId => "E002",
            DiagnosticCode::MaskLengthMismatch => "E003",
            DiagnosticCode::InvalidRegex => "E004",
            DiagnosticCode::UnknownEvalId => "E005",
            DiagnosticCode::UnknownSelectDirection => "E006",
            DiagnosticCode::PortOutOfRange => "E007",
            DiagnosticCode::DuplicateAbbreviation => "E008",
            DiagnosticCode::InvalidThreshold => "E009",
            DiagnosticCode::EmptyBytePattern => "E010",
            DiagnosticCode::NoServerPorts => "W101",
            DiagnosticCode::NoContentSignature => "W102",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            DiagnosticCode::NoServerPorts | DiagnosticCode::NoContentSignature => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    /// Abbreviation of the offending model (may be empty).
    pub model: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        if self.model.is_empty() {
            write!(f, "{sev}[{}]: {}", self.code.as_str(), self.message)
        } else {
            write!(f, "{sev}[{}] {}: {}", self.code.as_str(), self.model, self.message)
        }
    }
}

struct Sink<'a> {
    model: &'a str,
    out: Vec<Diagnostic>,
}

impl Sink<'_> {
    fn push(&mut self, code: DiagnosticCode, message: String) {
        self.out.push(Diagnostic {
            severity: code.severity(),
            code,
            model: self.model.to_string(),
            message,
        });
    }
}

pub fn validate_model(m: &ProtocolModel) -> Vec<Diagnostic> {
    let mut sink = Sink {
        model: &m.info.abbreviation,
        out: Vec::new(),
    };
    if m.info.abbreviation.trim().is_empty() {
        sink.push(DiagnosticCode::EmptyAbbreviation, "abbreviation is empty".into());
    }
    for p in &m.metadata.server_ports {
        if p.port == 0 || p.port > 65535 {
            sink.push(
                DiagnosticCode::PortOutOfRange,
                format!("server port {p} is outside 1-65535"),
            );
        }
    }
    if m.metadata.server_ports.is_empty() {
        sink.push(
            DiagnosticCode::NoServerPorts,
            "no server-ports; detections carry no port hint (port-agnostic only)".into(),
        );
    }

    for dir in DirectionName::ALL {
        let Some(section) = m.contents.section(dir) else {
            continue;
        };
        let mut seen = HashSet::new();
        for mt in &section.matchers {
            if !seen.insert(mt.id.as_str()) {
                sink.push(
                    DiagnosticCode::DuplicateMatcherId,
                    format!("{dir}: matcher id {:?} is used more than once", mt.id),
                );
            }
            match &mt.kind {
                MatcherKind::String(p) => {
                    if let Some(err) = p.error() {
                        sink.push(
                            DiagnosticCode::InvalidRegex,
                            format!("{dir}.{}: regex does not compile: {err}", mt.id),
                        );
                    }
                }
                MatcherKind::Byte(entries) => {
                    if entries.is_empty() {
                        sink.push(
                            DiagnosticCode::EmptyBytePattern,
                            format!("{dir}.{}: byte matcher has no patterns", mt.id),
                        );
                    }
                    for (i, e) in entries.iter().enumerate() {
                        if e.value.is_empty() || e.mask.len() != e.value.len() {
                            sink.push(
                                DiagnosticCode::MaskLengthMismatch,
                                format!(
                                    "{dir}.{} pattern {i}: mask is {} bytes, value is {} bytes",
                                    mt.id,
                                    e.mask.len(),
                                    e.value.len()
                                ),
                            );
                        }
                    }
                }
                MatcherKind::Statistical(p) => {
                    let ok = p.threshold.is_finite()
                        && match p.metric {
                            Metric::PrintableRatio => (0.0..=1.0).contains(&p.threshold),
                            Metric::PayloadLength => p.threshold >= 0.0,
                        };
                    if !ok {
                        sink.push(
                            DiagnosticCode::InvalidThreshold,
                            format!("{dir}.{}: threshold {} is out of range", mt.id, p.threshold),
                        );
                    }
                }
            }
        }
        if let Some(eval) = &section.eval {
            for id in eval.identifiers() {
                if !seen.contains(id) {
                    sink.push(
                        DiagnosticCode::UnknownEvalId,
                        format!("{dir}.eval references undefined matcher {id:?}"),
                    );
                }
            }
        }
    }

    if let Some(select) = &m.contents.select {
        for id in select.identifiers() {
            match DirectionName::from_name(id) {
                Some(d) if m.contents.section(d).is_some() => {}
                Some(_) => sink.push(
                    DiagnosticCode::UnknownSelectDirection,
                    format!("select references direction {id:?} which has no section"),
                ),
                None => sink.push(
                    DiagnosticCode::UnknownSelectDirection,
                    format!("select references {id:?}, which is not a direction name"),
                ),
            }
        }
    }

    if m.contents.matchers().next().is_none() {
        sink.push(
            DiagnosticCode::NoContentSignature,
            "model has no matchers and can never detect a flow".into(),
        );
    }
    sink.out
}

/// Per-model diagnostics plus cross-model abbreviation uniqueness.
pub fn validate_model_set(models: &[ProtocolModel]) -> Vec<Diagnostic> {
    let mut out: Vec<Diagnostic> = models.iter().flat_map(validate_model).collect();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for m in models {
        *counts.entry(m.info.abbreviation.to_ascii_uppercase()).or_default() += 1;
    }
    let mut dups: Vec<_> = counts.into_iter().filter(|(_, n)| *n > 1).collect();
    dups.sort();
    for (abbr, n) in dups {
        out.push(Diagnostic {
            severity: Severity::Error,
            code: DiagnosticCode::DuplicateAbbreviation,
            model: abbr.clone(),
            message: format!("abbreviation {abbr:?} is defined by {n} models"),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn codes(m: &ProtocolModel) -> Vec<&'static str> {
        validate_model(m).iter().map(|d| d.code.as_str()).collect()
    }

    fn with_request(matchers: Vec<Matcher>, eval: Option<&str>) -> ProtocolModel {
        ProtocolModel {
            info: Info {
                abbreviation: "T".into(),
                ..Default::default()
            },
            metadata: Metadata {
                server_ports: vec![ServerPort {
                    ip_protocol: IpProto::Tcp,
                    port: 1,
                }],
                ..Default::default()
            },
            contents: Contents {
                request: Some(Section {
                    matchers,
                    eval: eval.map(|e| e.parse().unwrap()),
                }),
                ..Default::default()
            },
        }
    }

    fn re(id: &str, src: &str) -> Matcher {
        Matcher {
            id: id.into(),
            kind: MatcherKind::String(RegexPattern::new(src, "")),
        }
    }

    #[test]
    fn clean_model_has_no_diagnostics() {
        assert!(codes(&with_request(vec![re("a", "x")], Some("a"))).is_empty());
    }

    #[test]
    fn short_mask_is_an_error() {
        let m = with_request(
            vec![Matcher {
                id: "b".into(),
                kind: MatcherKind::Byte(vec![BytePattern {
                    offset: 0,
                    value: vec![0x16, 0x03, 0x01],
                    mask: vec![0xff, 0xff],
                }]),
            }],
            None,
        );
        assert_eq!(codes(&m), ["E003"]);
    }

    #[test]
    fn empty_server_ports_warns() {
        let mut m = with_request(vec![re("a", "x")], None);
        m.metadata.server_ports.clear();
        let d = validate_model(&m);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Warning);
        assert!(d[0].message.contains("port-agnostic only"));
    }

    #[test]
    fn each_invariant_has_its_own_code() {
        let mut m = with_request(vec![re("a", "("), re("a", "x")], Some("a AND zz"));
        m.info.abbreviation.clear();
        m.metadata.server_ports.push(ServerPort {
            ip_protocol: IpProto::Udp,
            port: 70000,
        });
        m.contents.select = Some("request OR combined OR sideways".parse().unwrap());
        m.contents.response = Some(Section {
            matchers: vec![
                Matcher {
                    id: "e".into(),
                    kind: MatcherKind::Byte(vec![]),
                },
                Matcher {
                    id: "s".into(),
                    kind: MatcherKind::Statistical(StatPattern {
                        metric: Metric::PrintableRatio,
                        comparator: Comparator::Ge,
                        threshold: 1.5,
                    }),
                },
            ],
            eval: None,
        });
        let mut got = codes(&m);
        got.sort();
        got.dedup();
        assert_eq!(
            got,
            ["E001", "E002", "E004", "E005", "E006", "E007", "E009", "E010"]
        );
        let dup = validate_model_set(&[with_request(vec![re("a", "x")], None), with_request(vec![re("a", "y")], None)]);
        assert_eq!(dup.iter().filter(|d| d.code.as_str() == "E008").count(), 1);
        let empty = ProtocolModel {
            info: Info {
                abbreviation: "E".into(),
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(codes(&empty), ["W101", "W102"]);
    }
}
