//! End-to-end analysis: decode, assemble, detect, extract, audit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attrs::{extract, AttributeBundle, ExtractOptions, KnownProtocol};
use crate::compliance::{check_flow, CipherRegistry, ComplianceError, ComplianceFinding};
use crate::engine::{detect_all, rank, Confidence, Detection};
use crate::flow::{assemble, AssemblyStats, Endpoint, Flow, FlowConfig, FlowId};
use crate::model::{IpProto, ProtocolModel};
use crate::packet_io::{decode_all, DecodeStats, MacAddr, RawPacket};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalysisConfig {
    pub flow: FlowConfig,
    pub extract: ExtractOptions,
}

/// Everything learned about one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub flow_id: FlowId,
    pub client: Endpoint,
    pub server: Endpoint,
    pub transport: Option<IpProto>,
    pub client_mac: Option<MacAddr>,
    pub server_mac: Option<MacAddr>,
    pub packets: usize,
    /// All matching models, primary label first.
    pub detections: Vec<Detection>,
    pub attributes: Option<AttributeBundle>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extraction_errors: Vec<String>,
    pub findings: Vec<ComplianceFinding>,
}

impl FlowResult {
    pub fn primary(&self) -> Option<&Detection> {
        self.detections.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub decode: DecodeStats,
    pub assembly: AssemblyStats,
    pub flows: Vec<FlowResult>,
}

impl Analysis {
    pub fn detected(&self) -> impl Iterator<Item = &FlowResult> {
        self.flows.iter().filter(|f| f.primary().is_some())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Compliance(#[from] ComplianceError),
}

/// Extracts attributes for the leading detection. A failed extraction
/// demotes it to partial and the list is re-ranked, so a competing full
/// match can take the lead.
pub fn analyze_flow(
    flow: &Flow,
    models: &[ProtocolModel],
    registry: &CipherRegistry,
    opts: &ExtractOptions,
) -> Result<FlowResult, PipelineError> {
    let mut detections = detect_all(models, flow);
    let mut attributes = None;
    let mut errors = Vec::new();
    while let Some(lead) = detections.first_mut().filter(|d| d.confidence == Confidence::Full) {
        let Some(known) = KnownProtocol::from_abbreviation(&lead.protocol) else {
            break;
        };
        match extract(known, flow, opts) {
            Ok(a) => {
                attributes = Some(a);
                break;
            }
            Err(e) => {
                lead.confidence = Confidence::Partial;
                errors.push(e.to_string());
                rank(&mut detections);
            }
        }
    }
    let findings = match detections.first() {
        Some(d) => check_flow(d, attributes.as_ref(), registry)?,
        None => Vec::new(),
    };
    Ok(FlowResult {
        flow_id: flow.id,
        client: flow.initiator_endpoint(),
        server: flow.responder_endpoint(),
        transport: IpProto::from_number(flow.key.ip_protocol),
        client_mac: flow.initiator_mac(),
        server_mac: flow.responder_mac(),
        packets: flow.packets.len(),
        detections,
        attributes,
        extraction_errors: errors,
        findings,
    })
}

/// Runs the whole pipeline. Flows are analyzed in parallel; output order
/// follows flow ids.
pub fn analyze_packets(
    raw: &[RawPacket],
    models: &[ProtocolModel],
    registry: &CipherRegistry,
    config: &AnalysisConfig,
) -> Result<Analysis, PipelineError> {
    let (parsed, decode) = decode_all(raw);
    let (flows, assembly) = assemble(parsed, config.flow);
    let results = flows
        .par_iter()
        .map(|f| analyze_flow(f, models, registry, &config.extract))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Analysis {
        decode,
        assembly,
        flows: results,
    })
}
