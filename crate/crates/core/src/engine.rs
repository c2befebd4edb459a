//! Applies protocol models to flows.
//!
//! Detection looks only at payload bytes. Server ports and traffic mode are
//! recorded on the result and used to rank competing matches.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::flow::{combined_payload, ordered_payload, Direction, Flow, FlowId};
use crate::model::{
    BytePattern, DirectionName, Matcher, MatcherKind, Metric, ProtocolModel, Specificity,
    StatPattern, TrafficModeHint,
};
use crate::packet_io::TrafficMode;

const PRINTABLE_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Full,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub flow_id: FlowId,
    pub protocol: String,
    pub matched_directions: BTreeSet<DirectionName>,
    pub port_hint_agreed: bool,
    pub traffic_mode_agreed: bool,
    pub confidence: Confidence,
    pub specificity: Specificity,
}

impl Detection {
    fn rank_key(&self) -> (Confidence, bool, bool, Specificity, &str) {
        (
            self.confidence,
            !self.port_hint_agreed,
            !self.traffic_mode_agreed,
            self.specificity,
            &self.protocol,
        )
    }
}

/// Orders detections so the primary label comes first.
pub fn rank(detections: &mut [Detection]) {
    detections.sort_by(|a, b| a.rank_key().cmp(&b.rank_key()));
}

/// What a matcher gets to look at in one direction.
#[derive(Debug, Clone, Copy)]
pub struct PayloadView<'a> {
    /// Reassembled direction payload.
    pub stream: &'a [u8],
    /// Payload of the first packet carrying data in this direction.
    pub first_packet: &'a [u8],
}

impl<'a> PayloadView<'a> {
    pub fn whole(bytes: &'a [u8]) -> Self {
        PayloadView {
            stream: bytes,
            first_packet: bytes,
        }
    }
}

pub fn run_matcher(m: &Matcher, payload: PayloadView<'_>) -> bool {
    if payload.stream.is_empty() {
        return false;
    }
    match &m.kind {
        MatcherKind::String(p) => p.regex().is_some_and(|re| re.is_match(payload.stream)),
        MatcherKind::Byte(entries) => byte_match(entries, payload.stream),
        MatcherKind::Statistical(p) => stat_match(p, payload),
    }
}

fn byte_match(entries: &[BytePattern], data: &[u8]) -> bool {
    !entries.is_empty()
        && entries.iter().all(|e| {
            if e.mask.len() != e.value.len() {
                return false;
            }
            let Some(window) = e
                .offset
                .checked_add(e.value.len())
                .and_then(|end| data.get(e.offset..end))
            else {
                return false;
            };
            window
                .iter()
                .zip(&e.value)
                .zip(&e.mask)
                .all(|((&d, &v), &mk)| d & mk == v & mk)
        })
}

pub fn printable_ratio(data: &[u8]) -> f64 {
    let window = &data[..data.len().min(PRINTABLE_WINDOW)];
    if window.is_empty() {
        return 0.0;
    }
    let printable = window
        .iter()
        .filter(|&&b| (0x20..=0x7e).contains(&b) || matches!(b, b'\t' | b'\r' | b'\n'))
        .count();
    printable as f64 / window.len() as f64
}

fn stat_match(p: &StatPattern, payload: PayloadView<'_>) -> bool {
    let value = match p.metric {
        Metric::PrintableRatio => printable_ratio(payload.stream),
        Metric::PayloadLength => payload.first_packet.len() as f64,
    };
    p.comparator.holds(value, p.threshold)
}

/// Per-direction payloads for one flow, computed once and shared by all models.
#[derive(Debug, Clone)]
pub struct FlowPayloads {
    request: Vec<u8>,
    response: Vec<u8>,
    combined: Vec<u8>,
    request_first: Vec<u8>,
    response_first: Vec<u8>,
    combined_first: Vec<u8>,
}

impl FlowPayloads {
    pub fn new(flow: &Flow) -> Self {
        let combined_first = flow
            .packets
            .iter()
            .map(|fp| &fp.packet.payload)
            .find(|p| !p.is_empty())
            .cloned()
            .unwrap_or_default();
        FlowPayloads {
            request: ordered_payload(flow, Direction::Request).bytes,
            response: ordered_payload(flow, Direction::Response).bytes,
            combined: combined_payload(flow).bytes,
            request_first: flow.first_payload(Direction::Request).to_vec(),
            response_first: flow.first_payload(Direction::Response).to_vec(),
            combined_first,
        }
    }

    pub fn view(&self, d: DirectionName) -> PayloadView<'_> {
        match d {
            DirectionName::Request => PayloadView {
                stream: &self.request,
                first_packet: &self.request_first,
            },
            DirectionName::Response => PayloadView {
                stream: &self.response,
                first_packet: &self.response_first,
            },
            DirectionName::Combined => PayloadView {
                stream: &self.combined,
                first_packet: &self.combined_first,
            },
        }
    }
}

/// Which directions of `model` match, judged on payload alone.
pub fn matched_directions(model: &ProtocolModel, payloads: &FlowPayloads) -> BTreeSet<DirectionName> {
    let mut out = BTreeSet::new();
    for d in DirectionName::ALL {
        let Some(section) = model.contents.section(d) else {
            continue;
        };
        let Some(eval) = section.effective_eval() else {
            continue;
        };
        let view = payloads.view(d);
        let lookup = |id: &str| {
            section
                .matchers
                .iter()
                .find(|m| m.id == id)
                .map(|m| run_matcher(m, view))
        };
        // Validated models have no unbound ids; treat any as a non-match.
        if eval.eval_with(&lookup).unwrap_or(false) {
            out.insert(d);
        }
    }
    out
}

pub fn apply_model(model: &ProtocolModel, flow: &Flow) -> Option<Detection> {
    apply_model_with(model, flow, &FlowPayloads::new(flow))
}

pub fn apply_model_with(
    model: &ProtocolModel,
    flow: &Flow,
    payloads: &FlowPayloads,
) -> Option<Detection> {
    let select = model.contents.effective_select()?;
    let matched = matched_directions(model, payloads);
    let lookup = |name: &str| DirectionName::from_name(name).map(|d| matched.contains(&d));
    if !select.eval_with(&lookup).unwrap_or(false) || matched.is_empty() {
        return None;
    }
    Some(Detection {
        flow_id: flow.id,
        protocol: model.info.abbreviation.clone(),
        matched_directions: matched,
        port_hint_agreed: port_hint_agrees(model, flow),
        traffic_mode_agreed: traffic_mode_agrees(model.metadata.traffic_mode, flow.traffic_mode()),
        confidence: Confidence::Full,
        specificity: model.specificity(),
    })
}

/// True when the responder's port is one of the model's server ports.
pub fn port_hint_agrees(model: &ProtocolModel, flow: &Flow) -> bool {
    let port = flow.responder_endpoint().port as u32;
    model
        .metadata
        .server_ports
        .iter()
        .any(|sp| sp.port == port && sp.ip_protocol.number() == flow.key.ip_protocol)
}

fn traffic_mode_agrees(hint: TrafficModeHint, observed: TrafficMode) -> bool {
    match hint {
        TrafficModeHint::Any => true,
        TrafficModeHint::Unicast => observed == TrafficMode::Unicast,
        TrafficModeHint::Multicast => observed == TrafficMode::Multicast,
        TrafficModeHint::Broadcast => observed == TrafficMode::Broadcast,
    }
}

/// Applies every model and returns all matches, primary label first.
pub fn detect_all(models: &[ProtocolModel], flow: &Flow) -> Vec<Detection> {
    let payloads = FlowPayloads::new(flow);
    let mut out: Vec<Detection> = models
        .iter()
        .filter_map(|m| apply_model_with(m, flow, &payloads))
        .collect();
    rank(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_models, Comparator, RegexPattern};

    fn byte(offset: usize, value: &[u8], mask: &[u8]) -> Matcher {
        Matcher {
            id: "b".into(),
            kind: MatcherKind::Byte(vec![BytePattern {
                offset,
                value: value.to_vec(),
                mask: mask.to_vec(),
            }]),
        }
    }

    #[test]
    fn byte_matcher_on_tls10_client_hello_record() {
        let hello = [0x16, 0x03, 0x01, 0x00, 0x2f, 0x01, 0x00, 0x00, 0x2b, 0x03, 0x01];
        assert!(run_matcher(&byte(0, &[0x16, 0x03, 0x01], &[0xff; 3]), PayloadView::whole(&hello)));
        assert!(!run_matcher(&byte(0, &[0x16, 0x03, 0x03], &[0xff; 3]), PayloadView::whole(&hello)));
        assert!(run_matcher(&byte(0, &[0x16, 0x03, 0x00], &[0xff, 0xff, 0xfc]), PayloadView::whole(&hello)));
    }

    #[test]
    fn byte_matcher_needs_enough_payload() {
        assert!(!run_matcher(&byte(3, &[1, 2], &[0xff, 0xff]), PayloadView::whole(&[0, 0, 0, 1])));
        assert!(!run_matcher(&byte(usize::MAX, &[1], &[0xff]), PayloadView::whole(&[1])));
    }

    #[test]
    fn regex_matcher_on_request_line() {
        let m = Matcher {
            id: "r".into(),
            kind: MatcherKind::String(RegexPattern::new("^(GET|POST|PUT|HEAD|OPTIONS|DELETE) ", "")),
        };
        assert!(run_matcher(&m, PayloadView::whole(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")));
        assert!(!run_matcher(&m, PayloadView::whole(b"XGET / HTTP/1.1\r\n")));
    }

    #[test]
    fn every_matcher_fails_on_empty_payload() {
        let kinds = [
            MatcherKind::String(RegexPattern::new("", "")),
            MatcherKind::Byte(vec![BytePattern::exact(0, vec![])]),
            MatcherKind::Statistical(StatPattern {
                metric: Metric::PayloadLength,
                comparator: Comparator::Ge,
                threshold: 0.0,
            }),
            MatcherKind::Statistical(StatPattern {
                metric: Metric::PrintableRatio,
                comparator: Comparator::Le,
                threshold: 1.0,
            }),
        ];
        for kind in kinds {
            let m = Matcher { id: "x".into(), kind };
            assert!(!run_matcher(&m, PayloadView::whole(&[])));
        }
    }

    #[test]
    fn printable_ratio_window() {
        assert_eq!(printable_ratio(b"abcd"), 1.0);
        assert_eq!(printable_ratio(&[0, 0, b'a', b'b']), 0.5);
        let mut long = vec![b'a'; 64];
        long.extend_from_slice(&[0u8; 64]);
        assert_eq!(printable_ratio(&long), 1.0);
    }

    #[test]
    fn shipped_models_have_expected_specificity_order() {
        let mut ds: Vec<Detection> = builtin_models()
            .iter()
            .map(|m| Detection {
                flow_id: 0,
                protocol: m.info.abbreviation.clone(),
                matched_directions: [DirectionName::Request].into(),
                port_hint_agreed: false,
                traffic_mode_agreed: true,
                confidence: Confidence::Full,
                specificity: m.specificity(),
            })
            .collect();
        rank(&mut ds);
        let order: Vec<&str> = ds.iter().map(|d| d.protocol.as_str()).collect();
        assert_eq!(order, ["DHCP", "DNS", "NTP", "TLS", "HTTP", "SSDP"]);
    }
}
