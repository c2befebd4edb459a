//! Ground-truth pcap generation from declarative flow specs.

mod packets;
mod payloads;
mod spec;
mod truth;

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use spec::{
    default_extensions, AuthScheme, DhcpSpec, DnsSpec, ExtSpec, FlowSpec, HttpAuthSpec,
    HttpResponseSpec, HttpSpec, Manifest, NtpServerSpec, NtpSpec, ProtocolSpec, RawBytes, RawSpec,
    Segmentation, SsdpKindSpec, SsdpSpec, TlsServerSpec, TlsSpec,
};
pub use truth::{ground_truth, json_subset, GroundTruth, TruthEntry, STANDARD_PORTS};

use crate::compliance::CipherRegistry;
use crate::model::IpProto;
use crate::packet_io::{write_pcap_ordered, ByteOrder, PcapError, RawPacket, TcpFlags};
use packets::{derived_mac, dst_mac_for, frame, L4};
use payloads::Exchange;

/// Capture time of the first packet of a flow with `start_offset_ms == 0`.
pub const BASE_TS_SEC: u32 = 1_500_000_000;
pub const MSS: usize = 1460;
const SERVER_TTL: u8 = 64;
const RANDOM_MAX_SEGMENT: usize = 128;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("flow {index}: {message}")]
    Spec { index: usize, message: String },
    #[error("cannot read manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Pcap(#[from] PcapError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn spec_err(index: usize, message: impl Into<String>) -> SynthError {
    SynthError::Spec {
        index,
        message: message.into(),
    }
}

pub fn validate_spec(index: usize, s: &FlowSpec) -> Result<(), SynthError> {
    let fail = |m: &str| Err(spec_err(index, m));
    if s.client.is_ipv4() != s.server.is_ipv4() {
        return fail("client and server use different address families");
    }
    if s.client.port() == 0 || s.server.port() == 0 {
        return fail("port 0 is not allowed");
    }
    match &s.protocol {
        ProtocolSpec::Tls(t) => {
            let ok_ver = |v: crate::attrs::Version| v.0 == 3 && v.1 <= 3;
            if !ok_ver(t.record_version) || !ok_ver(t.client_version) {
                return fail("TLS versions must be 3.0 to 3.3 on the wire");
            }
            if t.server.as_ref().is_some_and(|sv| !ok_ver(sv.version)) {
                return fail("server TLS version must be 3.0 to 3.3 on the wire");
            }
            if t.ciphers.len() > 32_000 {
                return fail("cipher list too long");
            }
            let ext_bytes: usize = t.extensions.iter().map(|e| 4 + e.length as usize).sum();
            if ext_bytes > 16_000 {
                return fail("extensions too large for one record");
            }
        }
        ProtocolSpec::Http(h) => {
            let token = |x: &str| !x.is_empty() && !x.bytes().any(|b| b.is_ascii_whitespace());
            if !token(&h.method) || !token(&h.uri) {
                return fail("HTTP method and URI must be non-empty tokens");
            }
            if h.version.is_none() && h.response.is_some() {
                return fail("HTTP/0.9 requests take no structured response");
            }
            if h.response.as_ref().is_some_and(|r| !(100..=599).contains(&r.status)) {
                return fail("HTTP status must be 100-599");
            }
        }
        ProtocolSpec::Dns(d) => {
            if d.qname.trim_end_matches('.').split('.').any(|l| l.len() > 63) {
                return fail("DNS label longer than 63 bytes");
            }
            if d.qname.len() > 253 {
                return fail("DNS name longer than 253 bytes");
            }
            if d.rcode.is_some_and(|r| r > 15) {
                return fail("DNS rcode must fit in 4 bits");
            }
        }
        ProtocolSpec::Ntp(n) => {
            if n.client_version > 7 || n.client_mode > 7 {
                return fail("NTP version and mode are 3-bit fields");
            }
            if n.server.is_some_and(|sv| sv.version > 7 || sv.mode > 7) {
                return fail("NTP version and mode are 3-bit fields");
            }
        }
        ProtocolSpec::Dhcp(d) => {
            if d.params.len() > 255 || d.hostname.as_ref().is_some_and(|h| h.len() > 255) {
                return fail("DHCP option longer than 255 bytes");
            }
        }
        ProtocolSpec::Ssdp(sp) => {
            if sp.kind == SsdpKindSpec::Response && sp.st.is_none() {
                return fail("SSDP search responses need an ST header");
            }
        }
        ProtocolSpec::Raw(r) => {
            r.request.to_bytes().map_err(|m| spec_err(index, m))?;
            if let Some(resp) = &r.response {
                resp.to_bytes().map_err(|m| spec_err(index, m))?;
            }
        }
    }
    Ok(())
}

fn exchange(s: &FlowSpec, client_mac: crate::packet_io::MacAddr, rng: &mut ChaCha8Rng) -> Exchange {
    match &s.protocol {
        ProtocolSpec::Tls(t) => payloads::tls(t, rng),
        ProtocolSpec::Http(h) => payloads::http(h),
        ProtocolSpec::Dns(d) => payloads::dns(d),
        ProtocolSpec::Ntp(n) => payloads::ntp(n, rng),
        ProtocolSpec::Dhcp(d) => payloads::dhcp(d, client_mac),
        ProtocolSpec::Ssdp(sp) => payloads::ssdp(sp, &s.server.to_string()),
        ProtocolSpec::Raw(r) => Exchange {
            request: vec![r.request.to_bytes().unwrap_or_default()],
            response: r
                .response
                .as_ref()
                .map(|x| x.to_bytes().unwrap_or_default())
                .into_iter()
                .collect(),
        },
    }
}

fn segment_sizes(len: usize, seg: Segmentation) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = len;
    match seg {
        Segmentation::Single => {
            while left > 0 {
                let n = left.min(MSS);
                sizes.push(n);
                left -= n;
            }
        }
        Segmentation::PerByte => sizes.resize(len, 1),
        Segmentation::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while left > 0 {
                let n = rng.gen_range(1..=left.min(RANDOM_MAX_SEGMENT));
                sizes.push(n);
                left -= n;
            }
        }
    }
    sizes
}

struct Emitter<'a> {
    spec: &'a FlowSpec,
    client_mac: crate::packet_io::MacAddr,
    server_mac: crate::packet_io::MacAddr,
    ts_us: u64,
    ids: [u16; 2],
    out: Vec<RawPacket>,
}

impl Emitter<'_> {
    fn emit(&mut self, from_client: bool, l4: L4, payload: &[u8]) {
        let s = self.spec;
        let (src, dst, src_mac, dst_mac, ttl) = if from_client {
            (s.client, s.server, self.client_mac, dst_mac_for(s.server.ip(), self.server_mac), s.ip_ttl)
        } else {
            (s.server, s.client, self.server_mac, self.client_mac, SERVER_TTL)
        };
        let side = usize::from(!from_client);
        let id = self.ids[side];
        self.ids[side] = id.wrapping_add(1);
        let data = frame(src_mac, dst_mac, src, dst, ttl, id, l4, payload);
        let ts_sec = (self.ts_us / 1_000_000) as u32;
        let ts_usec = (self.ts_us % 1_000_000) as u32;
        self.out.push(RawPacket::new(ts_sec, ts_usec, data));
        self.ts_us += 1_000;
    }
}

/// Generates the packets of one flow. `seed` feeds ISNs and random fields;
/// identical inputs produce identical packets.
pub fn synth_flow(spec: &FlowSpec, seed: u64) -> Result<Vec<RawPacket>, SynthError> {
    synth_flow_indexed(0, spec, seed)
}

fn flow_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn synth_flow_indexed(index: usize, spec: &FlowSpec, seed: u64) -> Result<Vec<RawPacket>, SynthError> {
    validate_spec(index, spec)?;
    let mut rng = flow_rng(seed, index);
    let client_mac = spec.client_mac.unwrap_or_else(|| derived_mac(spec.client.ip(), 0x00));
    let server_mac = spec.server_mac.unwrap_or_else(|| derived_mac(spec.server.ip(), 0x01));
    let ex = exchange(spec, client_mac, &mut rng);
    let mut e = Emitter {
        spec,
        client_mac,
        server_mac,
        ts_us: u64::from(BASE_TS_SEC) * 1_000_000 + spec.start_offset_ms * 1_000,
        ids: [rng.gen(), rng.gen()],
        out: Vec::new(),
    };
    match spec.transport() {
        IpProto::Udp => {
            for m in &ex.request {
                e.emit(true, L4::Udp, m);
            }
            for m in &ex.response {
                e.emit(false, L4::Udp, m);
            }
        }
        IpProto::Tcp => {
            let (c_isn, s_isn): (u32, u32) = (rng.gen(), rng.gen());
            let tcp = |seq: u32, ack: u32, flags: u8| L4::Tcp { seq, ack, flags };
            e.emit(true, tcp(c_isn, 0, TcpFlags::SYN), &[]);
            e.emit(false, tcp(s_isn, c_isn.wrapping_add(1), TcpFlags::SYN | TcpFlags::ACK), &[]);
            let mut cs = c_isn.wrapping_add(1);
            let mut ss = s_isn.wrapping_add(1);
            e.emit(true, tcp(cs, ss, TcpFlags::ACK), &[]);
            let data_flags = TcpFlags::PSH | TcpFlags::ACK;
            let req: Vec<u8> = ex.request.concat();
            let resp: Vec<u8> = ex.response.concat();
            let mut at = 0;
            for n in segment_sizes(req.len(), spec.segmentation) {
                e.emit(true, tcp(cs, ss, data_flags), &req[at..at + n]);
                cs = cs.wrapping_add(n as u32);
                at += n;
            }
            if !resp.is_empty() {
                e.emit(false, tcp(ss, cs, TcpFlags::ACK), &[]);
            }
            at = 0;
            for n in segment_sizes(resp.len(), spec.segmentation) {
                e.emit(false, tcp(ss, cs, data_flags), &resp[at..at + n]);
                ss = ss.wrapping_add(n as u32);
                at += n;
            }
            e.emit(true, tcp(cs, ss, TcpFlags::FIN | TcpFlags::ACK), &[]);
            cs = cs.wrapping_add(1);
            e.emit(false, tcp(ss, cs, TcpFlags::FIN | TcpFlags::ACK), &[]);
            ss = ss.wrapping_add(1);
            e.emit(true, tcp(cs, ss, TcpFlags::ACK), &[]);
        }
    }
    Ok(e.out)
}

/// A generated capture and its expected outcomes.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub packets: Vec<RawPacket>,
    pub truth: GroundTruth,
}

/// Generates every flow of `manifest`, interleaved by timestamp.
pub fn synth_corpus(manifest: &Manifest, registry: &CipherRegistry) -> Result<Corpus, SynthError> {
    let mut keys = BTreeSet::new();
    let mut tagged: Vec<(u64, usize, usize, RawPacket)> = Vec::new();
    for (i, spec) in manifest.flows.iter().enumerate() {
        let key = canonical_key(spec.client, spec.server, spec.transport());
        if !keys.insert(key) {
            return Err(spec_err(i, "5-tuple repeats an earlier flow"));
        }
        for (j, p) in synth_flow_indexed(i, spec, manifest.seed)?.into_iter().enumerate() {
            let ts = u64::from(p.ts_sec) * 1_000_000 + u64::from(p.ts_usec);
            tagged.push((ts, i, j, p));
        }
    }
    tagged.sort_by_key(|t| (t.0, t.1, t.2));
    Ok(Corpus {
        packets: tagged.into_iter().map(|t| t.3).collect(),
        truth: ground_truth(manifest, registry),
    })
}

fn canonical_key(a: SocketAddr, b: SocketAddr, t: IpProto) -> (SocketAddr, SocketAddr, IpProto) {
    if a <= b {
        (a, b, t)
    } else {
        (b, a, t)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, SynthError> {
    let err = |message: String| SynthError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Path of the ground-truth file written next to `pcap`.
pub fn truth_path(pcap: &Path) -> PathBuf {
    let mut s = pcap.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

/// Writes `<out>` and `<out>.truth.json`.
pub fn write_corpus(corpus: &Corpus, out: &Path, order: ByteOrder) -> Result<(), SynthError> {
    write_pcap_ordered(out, &corpus.packets, order)?;
    let tp = truth_path(out);
    let json = serde_json::to_string_pretty(&corpus.truth).expect("truth serializes");
    std::fs::write(&tp, json + "\n").map_err(|source| SynthError::Io { path: tp, source })
}
