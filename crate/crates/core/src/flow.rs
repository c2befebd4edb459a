//! Bidirectional 5-tuple flow assembly and per-direction payload reconstruction.

use std::collections::HashMap;
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet_io::{MacAddr, ParsedPacket, Timestamp, TrafficMode, Transport, IPPROTO_TCP};

pub const DEFAULT_FLOW_TIMEOUT_SECS: u64 = 3600;
pub const DEFAULT_PAYLOAD_CAP: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowConfig {
    pub flow_timeout_secs: u64,
    /// Retained payload bytes per direction.
    pub payload_cap: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            flow_timeout_secs: DEFAULT_FLOW_TIMEOUT_SECS,
            payload_cap: DEFAULT_PAYLOAD_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ip {
            IpAddr::V4(ip) => write!(f, "{ip}:{}", self.port),
            IpAddr::V6(ip) => write!(f, "[{ip}]:{}", self.port),
        }
    }
}

/// Canonical key: `a <= b`, so both directions of a conversation share it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub a: Endpoint,
    pub b: Endpoint,
    pub ip_protocol: u8,
}

impl FlowKey {
    pub fn endpoint(&self, side: Side) -> Endpoint {
        match side {
            Side::A => self.a,
            Side::B => self.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Request,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("packet has no TCP/UDP ports and cannot belong to a flow")]
pub struct NotAFlowPacket;

/// Returns the canonical key and which side of it sent `p`.
pub fn flow_key(p: &ParsedPacket) -> Result<(FlowKey, Side), NotAFlowPacket> {
    let ip = p.ip.as_ref().ok_or(NotAFlowPacket)?;
    let (sport, dport) = p.ports().ok_or(NotAFlowPacket)?;
    let src = Endpoint {
        ip: ip.src,
        port: sport,
    };
    let dst = Endpoint {
        ip: ip.dst,
        port: dport,
    };
    let proto = ip.protocol;
    Ok(if src <= dst {
        (
            FlowKey {
                a: src,
                b: dst,
                ip_protocol: proto,
            },
            Side::A,
        )
    } else {
        (
            FlowKey {
                a: dst,
                b: src,
                ip_protocol: proto,
            },
            Side::B,
        )
    })
}

pub type FlowId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowPacket {
    pub direction: Direction,
    pub packet: ParsedPacket,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flow {
    pub id: FlowId,
    pub key: FlowKey,
    pub initiator: Side,
    pub packets: Vec<FlowPacket>,
    pub first_ts: Timestamp,
    pub last_ts: Timestamp,
    pub request_ip_ttl_first: Option<u8>,
    /// Payload bytes were dropped because a direction hit the retention cap.
    pub payload_clipped: bool,
    pub payload_cap: usize,
}

impl Flow {
    pub fn initiator_endpoint(&self) -> Endpoint {
        self.key.endpoint(self.initiator)
    }

    pub fn responder_endpoint(&self) -> Endpoint {
        self.key.endpoint(match self.initiator {
            Side::A => Side::B,
            Side::B => Side::A,
        })
    }

    pub fn is_tcp(&self) -> bool {
        self.key.ip_protocol == IPPROTO_TCP
    }

    pub fn packets_in(&self, d: Direction) -> impl Iterator<Item = &ParsedPacket> {
        self.packets
            .iter()
            .filter(move |fp| fp.direction == d)
            .map(|fp| &fp.packet)
    }

    /// Payload of the first packet in `d` that carries any.
    pub fn first_payload(&self, d: Direction) -> &[u8] {
        self.packets_in(d)
            .find(|p| !p.payload.is_empty())
            .map(|p| p.payload.as_slice())
            .unwrap_or(&[])
    }

    pub fn traffic_mode(&self) -> TrafficMode {
        self.packets_in(Direction::Request)
            .next()
            .map(|p| p.traffic_mode)
            .unwrap_or(TrafficMode::Unicast)
    }

    pub fn initiator_mac(&self) -> Option<MacAddr> {
        self.packets_in(Direction::Request).next().map(|p| p.src_mac)
    }

    pub fn responder_mac(&self) -> Option<MacAddr> {
        self.packets_in(Direction::Response)
            .next()
            .map(|p| p.src_mac)
            .or_else(|| {
                self.packets_in(Direction::Request)
                    .next()
                    .map(|p| p.dst_mac)
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrderedPayload {
    pub bytes: Vec<u8>,
    /// The stream stopped at a missing byte range.
    pub gap: bool,
}

/// Reassembles one direction of a flow.
pub fn ordered_payload(flow: &Flow, d: Direction) -> OrderedPayload {
    if flow.is_tcp() {
        tcp_stream(flow.packets_in(d), flow.payload_cap)
    } else {
        let mut bytes = Vec::new();
        for p in flow.packets_in(d) {
            bytes.extend_from_slice(&p.payload);
        }
        bytes.truncate(flow.payload_cap);
        OrderedPayload { bytes, gap: false }
    }
}

/// Both directions in one buffer; the direction that spoke first comes first.
pub fn combined_payload(flow: &Flow) -> OrderedPayload {
    let req = ordered_payload(flow, Direction::Request);
    let resp = ordered_payload(flow, Direction::Response);
    let first_of = |d: Direction| {
        flow.packets
            .iter()
            .position(|fp| fp.direction == d && !fp.packet.payload.is_empty())
    };
    let response_first = match (first_of(Direction::Request), first_of(Direction::Response)) {
        (Some(q), Some(r)) => r < q,
        (None, Some(_)) => true,
        _ => false,
    };
    let (first, second) = if response_first { (resp, req) } else { (req, resp) };
    let mut bytes = first.bytes;
    bytes.extend_from_slice(&second.bytes);
    OrderedPayload {
        bytes,
        gap: first.gap || second.gap,
    }
}

fn tcp_stream<'a>(packets: impl Iterator<Item = &'a ParsedPacket>, cap: usize) -> OrderedPayload {
    let mut isn: Option<u32> = None;
    let mut segments: Vec<(u32, &[u8])> = Vec::new();
    for p in packets {
        let Transport::Tcp { seq, flags, .. } = p.transport else {
            continue;
        };
        let data_seq = if flags.syn() {
            let next = seq.wrapping_add(1);
            isn.get_or_insert(next);
            next
        } else {
            seq
        };
        if !p.payload.is_empty() {
            segments.push((data_seq, &p.payload));
        }
    }
    if segments.is_empty() {
        return OrderedPayload::default();
    }
    let base = isn.unwrap_or(segments[0].0);
    let rel: Vec<(i64, &[u8])> = segments
        .iter()
        .map(|&(s, pl)| (s.wrapping_sub(base) as i32 as i64, pl))
        .collect();
    // Without a SYN the stream starts at the lowest observed sequence.
    let start = if isn.is_some() {
        0
    } else {
        rel.iter().map(|r| r.0).min().unwrap_or(0)
    };
    let end = rel
        .iter()
        .map(|&(off, pl)| off - start + pl.len() as i64)
        .max()
        .unwrap_or(0)
        .clamp(0, cap as i64) as usize;
    let mut buf = vec![0u8; end];
    let mut filled = vec![false; end];
    for (off, pl) in rel {
        let off = off - start;
        for (i, &b) in pl.iter().enumerate() {
            let pos = off + i as i64;
            if pos < 0 {
                continue;
            }
            let pos = pos as usize;
            if pos >= end {
                break;
            }
            if !filled[pos] {
                buf[pos] = b;
                filled[pos] = true;
            }
        }
    }
    let prefix = filled.iter().position(|f| !f).unwrap_or(end);
    buf.truncate(prefix);
    OrderedPayload {
        bytes: buf,
        gap: prefix < end,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyStats {
    pub packets: usize,
    pub non_flow_packets: usize,
    pub flows: usize,
}

struct Builder {
    key: FlowKey,
    first_sender: Side,
    syn_sender: Option<Side>,
    packets: Vec<(Side, ParsedPacket)>,
    first_ts: Timestamp,
    last_ts: Timestamp,
    retained: [usize; 2],
    clipped: bool,
}

/// Single-writer flow table. Flows come out in creation order.
pub struct FlowAssembler {
    config: FlowConfig,
    open: HashMap<FlowKey, usize>,
    builders: Vec<Builder>,
    stats: AssemblyStats,
}

impl FlowAssembler {
    pub fn new(config: FlowConfig) -> Self {
        FlowAssembler {
            config,
            open: HashMap::new(),
            builders: Vec::new(),
            stats: AssemblyStats::default(),
        }
    }

    pub fn push(&mut self, mut p: ParsedPacket) {
        self.stats.packets += 1;
        let Ok((key, side)) = flow_key(&p) else {
            self.stats.non_flow_packets += 1;
            return;
        };
        let timeout_us = self.config.flow_timeout_secs.saturating_mul(1_000_000);
        let existing = self.open.get(&key).copied().filter(|&i| {
            let last = self.builders[i].last_ts.as_micros();
            p.timestamp.as_micros().saturating_sub(last) <= timeout_us
        });
        let idx = match existing {
            Some(i) => i,
            None => {
                self.builders.push(Builder {
                    key,
                    first_sender: side,
                    syn_sender: None,
                    packets: Vec::new(),
                    first_ts: p.timestamp,
                    last_ts: p.timestamp,
                    retained: [0, 0],
                    clipped: false,
                });
                let i = self.builders.len() - 1;
                self.open.insert(key, i);
                i
            }
        };
        let cap = self.config.payload_cap;
        let b = &mut self.builders[idx];
        if let Some(fl) = p.tcp_flags() {
            if fl.syn() && !fl.ack() && b.syn_sender.is_none() {
                b.syn_sender = Some(side);
            }
        }
        let kept = &mut b.retained[side.index()];
        let room = cap.saturating_sub(*kept);
        if p.payload.len() > room {
            p.payload.truncate(room);
            b.clipped = true;
        }
        *kept += p.payload.len();
        b.first_ts = b.first_ts.min(p.timestamp);
        b.last_ts = b.last_ts.max(p.timestamp);
        b.packets.push((side, p));
    }

    pub fn stats(&self) -> AssemblyStats {
        AssemblyStats {
            flows: self.builders.len(),
            ..self.stats
        }
    }

    pub fn finish(self) -> (Vec<Flow>, AssemblyStats) {
        let stats = self.stats();
        let cap = self.config.payload_cap;
        let flows = self
            .builders
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                let initiator = b.syn_sender.unwrap_or(b.first_sender);
                let packets: Vec<FlowPacket> = b
                    .packets
                    .into_iter()
                    .map(|(side, packet)| FlowPacket {
                        direction: if side == initiator {
                            Direction::Request
                        } else {
                            Direction::Response
                        },
                        packet,
                    })
                    .collect();
                let request_ip_ttl_first = packets
                    .iter()
                    .find(|fp| fp.direction == Direction::Request)
                    .and_then(|fp| fp.packet.ip.map(|ip| ip.ttl));
                Flow {
                    id: i as FlowId,
                    key: b.key,
                    initiator,
                    packets,
                    first_ts: b.first_ts,
                    last_ts: b.last_ts,
                    request_ip_ttl_first,
                    payload_clipped: b.clipped,
                    payload_cap: cap,
                }
            })
            .collect();
        (flows, stats)
    }
}

pub fn assemble(
    packets: impl IntoIterator<Item = ParsedPacket>,
    config: FlowConfig,
) -> (Vec<Flow>, AssemblyStats) {
    let mut asm = FlowAssembler::new(config);
    for p in packets {
        asm.push(p);
    }
    asm.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet_io::{IpInfo, TcpFlags, IPPROTO_UDP};
    use std::net::Ipv4Addr;

    fn ip(last: u8) -> IpAddr {
        IpAddr::V4(Ipv4Addr::new(10, 0, 0, last))
    }

    fn pkt(src: (u8, u16), dst: (u8, u16), transport: Transport, payload: &[u8], sec: u32) -> ParsedPacket {
        let protocol = match transport {
            Transport::Tcp { .. } => IPPROTO_TCP,
            _ => IPPROTO_UDP,
        };
        ParsedPacket {
            timestamp: Timestamp::new(sec, 0),
            src_mac: MacAddr([2, 0, 0, 0, 0, src.0]),
            dst_mac: MacAddr([2, 0, 0, 0, 0, dst.0]),
            ether_type: 0x0800,
            ip: Some(IpInfo {
                src: ip(src.0),
                dst: ip(dst.0),
                ttl: 60 + src.0,
                protocol,
            }),
            transport,
            traffic_mode: TrafficMode::Unicast,
            payload: payload.to_vec(),
        }
    }

    fn udp(src: (u8, u16), dst: (u8, u16), payload: &[u8], sec: u32) -> ParsedPacket {
        pkt(src, dst, Transport::Udp { src_port: src.1, dst_port: dst.1 }, payload, sec)
    }

    fn tcp(src: (u8, u16), dst: (u8, u16), seq: u32, flags: u8, payload: &[u8]) -> ParsedPacket {
        pkt(
            src,
            dst,
            Transport::Tcp {
                src_port: src.1,
                dst_port: dst.1,
                seq,
                ack: 0,
                flags: TcpFlags(flags),
            },
            payload,
            0,
        )
    }

    #[test]
    fn key_is_symmetric() {
        let q = udp((2, 50000), (1, 53), b"q", 0);
        let r = udp((1, 53), (2, 50000), b"r", 0);
        let (kq, sq) = flow_key(&q).unwrap();
        let (kr, sr) = flow_key(&r).unwrap();
        assert_eq!(kq, kr);
        assert_ne!(sq, sr);
        assert!(kq.a <= kq.b);
    }

    #[test]
    fn tcp_and_udp_keys_differ() {
        let u = udp((2, 5000), (1, 80), b"", 0);
        let t = tcp((2, 5000), (1, 80), 0, 0, b"");
        assert_ne!(flow_key(&u).unwrap().0, flow_key(&t).unwrap().0);
    }

    #[test]
    fn non_port_packets_are_rejected() {
        let mut p = udp((2, 1), (1, 2), b"", 0);
        p.transport = Transport::Other;
        assert_eq!(flow_key(&p), Err(NotAFlowPacket));
        p.ip = None;
        assert_eq!(flow_key(&p), Err(NotAFlowPacket));
    }

    #[test]
    fn syn_sender_is_initiator_even_if_seen_second() {
        let pkts = vec![
            tcp((1, 443), (2, 50000), 900, TcpFlags::SYN | TcpFlags::ACK, b""),
            tcp((2, 50000), (1, 443), 100, TcpFlags::SYN, b""),
            tcp((2, 50000), (1, 443), 101, TcpFlags::ACK, b"hello"),
        ];
        let (flows, _) = assemble(pkts, FlowConfig::default());
        assert_eq!(flows.len(), 1);
        let f = &flows[0];
        assert_eq!(f.initiator_endpoint().port, 50000);
        assert_eq!(f.packets[0].direction, Direction::Response);
        assert_eq!(f.request_ip_ttl_first, Some(62));
        assert_eq!(ordered_payload(f, Direction::Request).bytes, b"hello");
    }

    #[test]
    fn first_sender_initiates_udp() {
        let (flows, _) = assemble(
            vec![udp((2, 50000), (1, 53), b"q", 0), udp((1, 53), (2, 50000), b"r", 0)],
            FlowConfig::default(),
        );
        assert_eq!(flows[0].responder_endpoint().port, 53);
        assert_eq!(ordered_payload(&flows[0], Direction::Response).bytes, b"r");
    }

    #[test]
    fn idle_gap_splits_flow() {
        let (flows, stats) = assemble(
            vec![
                udp((2, 50000), (1, 53), b"a", 0),
                udp((2, 50000), (1, 53), b"b", 3600),
                udp((2, 50000), (1, 53), b"c", 7201),
            ],
            FlowConfig::default(),
        );
        assert_eq!(stats.flows, 2);
        assert_eq!(flows[0].packets.len(), 2);
        assert_eq!(flows[1].first_ts.sec, 7201);
    }

    #[test]
    fn swapped_segments_reassemble() {
        let c = (2, 50000);
        let s = (1, 80);
        let syn = tcp(c, s, 999, TcpFlags::SYN, b"");
        let a = tcp(c, s, 1000, TcpFlags::ACK, b"GET / HT");
        let b = tcp(c, s, 1008, TcpFlags::ACK, b"TP/1.1\r\n");
        let (f1, _) = assemble(vec![syn.clone(), a.clone(), b.clone()], FlowConfig::default());
        let (f2, _) = assemble(vec![syn, b, a], FlowConfig::default());
        let p1 = ordered_payload(&f1[0], Direction::Request);
        assert_eq!(p1.bytes, b"GET / HTTP/1.1\r\n");
        assert_eq!(p1, ordered_payload(&f2[0], Direction::Request));
    }

    #[test]
    fn gap_truncates_and_flags() {
        let c = (2, 50000);
        let s = (1, 80);
        let (f, _) = assemble(
            vec![
                tcp(c, s, 0, TcpFlags::SYN, b""),
                tcp(c, s, 1, TcpFlags::ACK, b"abc"),
                tcp(c, s, 10, TcpFlags::ACK, b"xyz"),
            ],
            FlowConfig::default(),
        );
        let p = ordered_payload(&f[0], Direction::Request);
        assert_eq!(p.bytes, b"abc");
        assert!(p.gap);
    }

    #[test]
    fn sequence_wraparound() {
        let c = (2, 50000);
        let s = (1, 80);
        let (f, _) = assemble(
            vec![
                tcp(c, s, u32::MAX - 2, TcpFlags::SYN, b""),
                tcp(c, s, u32::MAX - 1, TcpFlags::ACK, b"ab"),
                tcp(c, s, 0, TcpFlags::ACK, b"cd"),
            ],
            FlowConfig::default(),
        );
        assert_eq!(ordered_payload(&f[0], Direction::Request).bytes, b"abcd");
    }

    #[test]
    fn retention_cap_clips_payload() {
        let cfg = FlowConfig {
            payload_cap: 4,
            ..Default::default()
        };
        let (f, _) = assemble(
            vec![udp((2, 1), (1, 2), b"abc", 0), udp((2, 1), (1, 2), b"def", 0)],
            cfg,
        );
        assert!(f[0].payload_clipped);
        assert_eq!(ordered_payload(&f[0], Direction::Request).bytes, b"abcd");
    }

    #[test]
    fn combined_puts_first_speaker_first() {
        let (f, _) = assemble(
            vec![
                tcp((2, 50000), (1, 25), 0, TcpFlags::SYN, b""),
                tcp((1, 25), (2, 50000), 0, TcpFlags::SYN | TcpFlags::ACK, b""),
                tcp((1, 25), (2, 50000), 1, TcpFlags::ACK, b"220 hi\r\n"),
                tcp((2, 50000), (1, 25), 1, TcpFlags::ACK, b"EHLO x\r\n"),
            ],
            FlowConfig::default(),
        );
        assert_eq!(combined_payload(&f[0]).bytes, b"220 hi\r\nEHLO x\r\n");
    }
}
