//! On-disk JSON layout and conversion to/from the domain model.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    BytePattern, Comparator, Contents, Expr, Info, IpProto, Matcher, MatcherKind, Metadata,
    Metric, ModelError, ProtocolModel, RegexPattern, Section, ServerPort, StatPattern,
    TrafficModeHint,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    info: InfoDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<MetadataDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contents: Option<ContentsDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InfoDoc {
    abbreviation: String,
    #[serde(rename = "standard-name", default)]
    standard_name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    source: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataDoc {
    #[serde(rename = "ether-types", default)]
    ether_types: Vec<String>,
    #[serde(rename = "traffic-mode", default)]
    traffic_mode: TrafficModeHint,
    #[serde(rename = "server-ports", default)]
    server_ports: Vec<ServerPortDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServerPortDoc {
    #[serde(rename = "ip-protocol")]
    ip_protocol: IpProto,
    port: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContentsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    request: Option<SectionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response: Option<SectionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    combined: Option<SectionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    select: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionDoc {
    #[serde(default)]
    matchers: Vec<MatcherDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eval: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatcherDoc {
    id: String,
    #[serde(rename = "matcher-type")]
    matcher_type: String,
    #[serde(rename = "matcher-pattern")]
    matcher_pattern: Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StringPatternDoc {
    regex: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    flags: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ByteEntryDoc {
    offset: usize,
    value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatPatternDoc {
    metric: Metric,
    comparator: Comparator,
    threshold: f64,
}

pub(super) fn from_json(text: &str) -> Result<ProtocolModel, ModelError> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => ModelError::Parse {
                origin: String::new(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
            Category::Data => ModelError::schema(e.to_string()),
        }
    })?;
    convert(doc)
}

fn convert(doc: ModelDoc) -> Result<ProtocolModel, ModelError> {
    let info = Info {
        abbreviation: doc.info.abbreviation,
        standard_name: doc.info.standard_name,
        description: doc.info.description,
        source: doc.info.source,
    };
    let metadata = match doc.metadata {
        None => Metadata::default(),
        Some(md) => Metadata {
            ether_types: md
                .ether_types
                .iter()
                .map(|s| parse_ether_type(s))
                .collect::<Result<_, _>>()?,
            traffic_mode: md.traffic_mode,
            server_ports: md
                .server_ports
                .into_iter()
                .map(|p| ServerPort {
                    ip_protocol: p.ip_protocol,
                    port: p.port,
                })
                .collect(),
        },
    };
    let contents = match doc.contents {
        None => Contents::default(),
        Some(c) => Contents {
            request: c.request.map(|s| convert_section(s, "request")).transpose()?,
            response: c.response.map(|s| convert_section(s, "response")).transpose()?,
            combined: c.combined.map(|s| convert_section(s, "combined")).transpose()?,
            select: c
                .select
                .map(|s| {
                    Expr::parse(&s).map_err(|e| ModelError::schema(format!("select: {e}")))
                })
                .transpose()?,
        },
    };
    Ok(ProtocolModel {
        info,
        metadata,
        contents,
    })
}

fn parse_ether_type(s: &str) -> Result<u16, ModelError> {
    let t = s.trim();
    let digits = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    u16::from_str_radix(digits, 16)
        .map_err(|_| ModelError::schema(format!("ether-type {s:?} is not a 16-bit hex code")))
}

fn convert_section(s: SectionDoc, dir: &str) -> Result<Section, ModelError> {
    let matchers = s
        .matchers
        .into_iter()
        .map(|m| convert_matcher(m, dir))
        .collect::<Result<_, _>>()?;
    let eval = s
        .eval
        .map(|e| Expr::parse(&e).map_err(|err| ModelError::schema(format!("{dir}.eval: {err}"))))
        .transpose()?;
    Ok(Section { matchers, eval })
}

fn convert_matcher(m: MatcherDoc, dir: &str) -> Result<Matcher, ModelError> {
    let ctx = |msg: String| ModelError::schema(format!("{dir} matcher {:?}: {msg}", m.id));
    let kind = match m.matcher_type.as_str() {
        "string" => {
            let p: StringPatternDoc =
                serde_json::from_value(m.matcher_pattern.clone()).map_err(|e| ctx(e.to_string()))?;
            MatcherKind::String(RegexPattern::new(p.regex, p.flags))
        }
        "byte" => {
            let entries: Vec<ByteEntryDoc> =
                serde_json::from_value(m.matcher_pattern.clone()).map_err(|e| ctx(e.to_string()))?;
            let mut out = Vec::with_capacity(entries.len());
            for e in entries {
                let value = decode_hex(&e.value).map_err(&ctx)?;
                let mask = match e.mask {
                    Some(mk) => decode_hex(&mk).map_err(&ctx)?,
                    None => vec![0xff; value.len()],
                };
                out.push(BytePattern {
                    offset: e.offset,
                    value,
                    mask,
                });
            }
            MatcherKind::Byte(out)
        }
        "statistical" => {
            let p: StatPatternDoc =
                serde_json::from_value(m.matcher_pattern.clone()).map_err(|e| ctx(e.to_string()))?;
            MatcherKind::Statistical(StatPattern {
                metric: p.metric,
                comparator: p.comparator,
                threshold: p.threshold,
            })
        }
        other => return Err(ctx(format!("unknown matcher-type {other:?}"))),
    };
    Ok(Matcher { id: m.id, kind })
}

fn decode_hex(s: &str) -> Result<Vec<u8>, String> {
    let cleaned: String = s
        .trim()
        .trim_start_matches("0x")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    hex::decode(&cleaned).map_err(|e| format!("bad hex {s:?}: {e}"))
}

pub(super) fn to_json(m: &ProtocolModel) -> String {
    let md = &m.metadata;
    let metadata = (md != &Metadata::default()).then(|| MetadataDoc {
        ether_types: md.ether_types.iter().map(|t| format!("0x{t:04x}")).collect(),
        traffic_mode: md.traffic_mode,
        server_ports: md
            .server_ports
            .iter()
            .map(|p| ServerPortDoc {
                ip_protocol: p.ip_protocol,
                port: p.port,
            })
            .collect(),
    });
    let c = &m.contents;
    let contents = (c != &Contents::default()).then(|| ContentsDoc {
        request: c.request.as_ref().map(section_doc),
        response: c.response.as_ref().map(section_doc),
        combined: c.combined.as_ref().map(section_doc),
        select: c.select.as_ref().map(|e| e.to_string()),
    });
    let doc = ModelDoc {
        info: InfoDoc {
            abbreviation: m.info.abbreviation.clone(),
            standard_name: m.info.standard_name.clone(),
            description: m.info.description.clone(),
            source: m.info.source.clone(),
        },
        metadata,
        contents,
    };
    serde_json::to_string_pretty(&doc).expect("model documents always serialize")
}

fn section_doc(s: &Section) -> SectionDoc {
    SectionDoc {
        matchers: s.matchers.iter().map(matcher_doc).collect(),
        eval: s.eval.as_ref().map(|e| e.to_string()),
    }
}

fn matcher_doc(m: &Matcher) -> MatcherDoc {
    let pattern = match &m.kind {
        MatcherKind::String(p) => serde_json::to_value(StringPatternDoc {
            regex: p.source.clone(),
            flags: p.flags.clone(),
        }),
        MatcherKind::Byte(entries) => serde_json::to_value(
            entries
                .iter()
                .map(|e| ByteEntryDoc {
                    offset: e.offset,
                    value: hex::encode(&e.value),
                    mask: Some(hex::encode(&e.mask)),
                })
                .collect::<Vec<_>>(),
        ),
        MatcherKind::Statistical(p) => serde_json::to_value(StatPatternDoc {
            metric: p.metric,
            comparator: p.comparator,
            threshold: p.threshold,
        }),
    };
    MatcherDoc {
        id: m.id.clone(),
        matcher_type: m.kind.type_name().to_string(),
        matcher_pattern: pattern.expect("matcher patterns always serialize"),
    }
}
