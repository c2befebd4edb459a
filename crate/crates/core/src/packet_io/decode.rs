use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::RawPacket;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    pub fn is_broadcast(&self) -> bool {
        *self == Self::BROADCAST
    }

    pub fn is_multicast(&self) -> bool {
        self.0[0] & 1 == 1
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address {0:?}")]
pub struct MacParseError(pub String);

impl FromStr for MacAddr {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(MacParseError(s.to_string()));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            if part.len() != 2 {
                return Err(MacParseError(s.to_string()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| MacParseError(s.to_string()))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Timestamp {
    pub sec: u32,
    pub usec: u32,
}

impl Timestamp {
    pub fn new(sec: u32, usec: u32) -> Self {
        Timestamp { sec, usec }
    }

    pub fn as_micros(&self) -> u64 {
        self.sec as u64 * 1_000_000 + self.usec as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficMode {
    Unicast,
    Multicast,
    Broadcast,
}

impl fmt::Display for TrafficMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrafficMode::Unicast => "unicast",
            TrafficMode::Multicast => "multicast",
            TrafficMode::Broadcast => "broadcast",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;

    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    pub fn syn(self) -> bool {
        self.has(Self::SYN)
    }

    pub fn ack(self) -> bool {
        self.has(Self::ACK)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Tcp {
        src_port: u16,
        dst_port: u16,
        seq: u32,
        ack: u32,
        flags: TcpFlags,
    },
    Udp {
        src_port: u16,
        dst_port: u16,
    },
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpInfo {
    pub src: IpAddr,
    pub dst: IpAddr,
    pub ttl: u8,
    pub protocol: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub timestamp: Timestamp,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub ether_type: u16,
    pub ip: Option<IpInfo>,
    pub transport: Transport,
    pub traffic_mode: TrafficMode,
    pub payload: Vec<u8>,
}

impl ParsedPacket {
    pub fn ports(&self) -> Option<(u16, u16)> {
        match self.transport {
            Transport::Tcp {
                src_port, dst_port, ..
            }
            | Transport::Udp { src_port, dst_port } => Some((src_port, dst_port)),
            Transport::Other => None,
        }
    }

    pub fn tcp_flags(&self) -> Option<TcpFlags> {
        match self.transport {
            Transport::Tcp { flags, .. } => Some(flags),
            _ => None,
        }
    }

    pub fn tcp_seq(&self) -> Option<u32> {
        match self.transport {
            Transport::Tcp { seq, .. } => Some(seq),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed {layer}: {reason}")]
    Malformed {
        layer: &'static str,
        reason: &'static str,
    },
    #[error("non-first IP fragment")]
    NonFirstFragment,
}

fn malformed(layer: &'static str, reason: &'static str) -> DecodeError {
    DecodeError::Malformed { layer, reason }
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct NetLayer<'a> {
    info: IpInfo,
    body: &'a [u8],
    // Body may legitimately be shorter than the transport header claims.
    incomplete: bool,
}

/// Decodes Ethernet, optional 802.1Q tags, IPv4/IPv6 and TCP/UDP headers.
///
/// Never panics on arbitrary input.
pub fn decode_packet(raw: &RawPacket) -> Result<ParsedPacket, DecodeError> {
    let data = &raw.data;
    if data.len() < 14 {
        return Err(malformed("ethernet", "frame shorter than 14 bytes"));
    }
    let dst_mac = MacAddr(data[0..6].try_into().unwrap());
    let src_mac = MacAddr(data[6..12].try_into().unwrap());
    let mut ether_type = be16(data, 12);
    let mut off = 14;
    while ether_type == ETHERTYPE_VLAN || ether_type == ETHERTYPE_QINQ {
        if data.len() < off + 4 {
            return Err(malformed("vlan", "tag truncated"));
        }
        ether_type = be16(data, off + 2);
        off += 4;
    }
    let snapped = raw.is_snapped();
    let l3 = &data[off..];
    let net = match ether_type {
        ETHERTYPE_IPV4 => Some(decode_ipv4(l3, snapped)?),
        ETHERTYPE_IPV6 => Some(decode_ipv6(l3, snapped)?),
        _ => None,
    };
    let timestamp = Timestamp::new(raw.ts_sec, raw.ts_usec);
    let Some(net) = net else {
        let traffic_mode = if dst_mac.is_broadcast() {
            TrafficMode::Broadcast
        } else if dst_mac.is_multicast() {
            TrafficMode::Multicast
        } else {
            TrafficMode::Unicast
        };
        return Ok(ParsedPacket {
            timestamp,
            src_mac,
            dst_mac,
            ether_type,
            ip: None,
            transport: Transport::Other,
            traffic_mode,
            payload: Vec::new(),
        });
    };
    let (transport, payload) = decode_transport(net.info.protocol, net.body, net.incomplete)?;
    Ok(ParsedPacket {
        timestamp,
        src_mac,
        dst_mac,
        ether_type,
        traffic_mode: traffic_mode_of(&net.info.dst, &dst_mac),
        ip: Some(net.info),
        transport,
        payload: payload.to_vec(),
    })
}

pub fn traffic_mode_of(dst: &IpAddr, dst_mac: &MacAddr) -> TrafficMode {
    if dst.is_multicast() {
        TrafficMode::Multicast
    } else if *dst == IpAddr::V4(Ipv4Addr::BROADCAST) || dst_mac.is_broadcast() {
        TrafficMode::Broadcast
    } else {
        TrafficMode::Unicast
    }
}

fn decode_ipv4(b: &[u8], snapped: bool) -> Result<NetLayer<'_>, DecodeError> {
    if b.len() < 20 {
        return Err(malformed("ipv4", "header truncated"));
    }
    if b[0] >> 4 != 4 {
        return Err(malformed("ipv4", "version is not 4"));
    }
    let ihl = (b[0] & 0x0f) as usize * 4;
    if ihl < 20 || ihl > b.len() {
        return Err(malformed("ipv4", "bad header length"));
    }
    let total = be16(b, 2) as usize;
    if total < ihl {
        return Err(malformed("ipv4", "total length below header length"));
    }
    let end = if total > b.len() {
        if !snapped {
            return Err(malformed("ipv4", "total length exceeds frame"));
        }
        b.len()
    } else {
        // Trailing bytes past total length are Ethernet padding.
        total
    };
    let frag = be16(b, 6);
    if frag & 0x1fff != 0 {
        return Err(DecodeError::NonFirstFragment);
    }
    let more_fragments = frag & 0x2000 != 0;
    Ok(NetLayer {
        info: IpInfo {
            src: IpAddr::V4(Ipv4Addr::new(b[12], b[13], b[14], b[15])),
            dst: IpAddr::V4(Ipv4Addr::new(b[16], b[17], b[18], b[19])),
            ttl: b[8],
            protocol: b[9],
        },
        body: &b[ihl..end],
        incomplete: snapped || more_fragments,
    })
}

fn decode_ipv6(b: &[u8], snapped: bool) -> Result<NetLayer<'_>, DecodeError> {
    if b.len() < 40 {
        return Err(malformed("ipv6", "header truncated"));
    }
    if b[0] >> 4 != 6 {
        return Err(malformed("ipv6", "version is not 6"));
    }
    let payload_len = be16(b, 4) as usize;
    let avail = b.len() - 40;
    let body_len = if payload_len == 0 {
        avail
    } else if payload_len > avail {
        if !snapped {
            return Err(malformed("ipv6", "payload length exceeds frame"));
        }
        avail
    } else {
        payload_len
    };
    let src = Ipv6Addr::from(<[u8; 16]>::try_from(&b[8..24]).unwrap());
    let dst = Ipv6Addr::from(<[u8; 16]>::try_from(&b[24..40]).unwrap());
    let mut next = b[6];
    let mut body = &b[40..40 + body_len];
    let mut more_fragments = false;
    loop {
        match next {
            // hop-by-hop, routing, destination options
            0 | 43 | 60 => {
                if body.len() < 2 {
                    return Err(malformed("ipv6", "extension header truncated"));
                }
                let len = (body[1] as usize + 1) * 8;
                if body.len() < len {
                    return Err(malformed("ipv6", "extension header truncated"));
                }
                next = body[0];
                body = &body[len..];
            }
            44 => {
                if body.len() < 8 {
                    return Err(malformed("ipv6", "fragment header truncated"));
                }
                let frag = be16(body, 2);
                if frag >> 3 != 0 {
                    return Err(DecodeError::NonFirstFragment);
                }
                more_fragments = frag & 1 != 0;
                next = body[0];
                body = &body[8..];
            }
            51 => {
                if body.len() < 2 {
                    return Err(malformed("ipv6", "auth header truncated"));
                }
                let len = (body[1] as usize + 2) * 4;
                if body.len() < len {
                    return Err(malformed("ipv6", "auth header truncated"));
                }
                next = body[0];
                body = &body[len..];
            }
            _ => break,
        }
    }
    Ok(NetLayer {
        info: IpInfo {
            src: IpAddr::V6(src),
            dst: IpAddr::V6(dst),
            ttl: b[7],
            protocol: next,
        },
        body,
        incomplete: snapped || more_fragments,
    })
}

fn decode_transport(
    protocol: u8,
    body: &[u8],
    incomplete: bool,
) -> Result<(Transport, &[u8]), DecodeError> {
    match protocol {
        IPPROTO_TCP => {
            if body.len() < 20 {
                return Err(malformed("tcp", "header truncated"));
            }
            let doff = (body[12] >> 4) as usize * 4;
            if doff < 20 || doff > body.len() {
                return Err(malformed("tcp", "bad data offset"));
            }
            Ok((
                Transport::Tcp {
                    src_port: be16(body, 0),
                    dst_port: be16(body, 2),
                    seq: be32(body, 4),
                    ack: be32(body, 8),
                    flags: TcpFlags(body[13]),
                },
                &body[doff..],
            ))
        }
        IPPROTO_UDP => {
            if body.len() < 8 {
                return Err(malformed("udp", "header truncated"));
            }
            let ulen = be16(body, 4) as usize;
            let end = if ulen == 0 {
                // Jumbogram or unset length: take what is there.
                body.len()
            } else if ulen < 8 {
                return Err(malformed("udp", "length below header size"));
            } else if ulen > body.len() {
                if !incomplete {
                    return Err(malformed("udp", "length exceeds datagram"));
                }
                body.len()
            } else {
                ulen
            };
            Ok((
                Transport::Udp {
                    src_port: be16(body, 0),
                    dst_port: be16(body, 2),
                },
                &body[8..end],
            ))
        }
        _ => Ok((Transport::Other, &[][..])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eth(dst: [u8; 6], ether_type: u16, body: &[u8]) -> Vec<u8> {
        let mut f = dst.to_vec();
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x10]);
        f.extend_from_slice(&ether_type.to_be_bytes());
        f.extend_from_slice(body);
        f
    }

    fn ipv4(src: [u8; 4], dst: [u8; 4], proto: u8, frag: u16, body: &[u8]) -> Vec<u8> {
        let total = (20 + body.len()) as u16;
        let mut h = vec![0x45, 0];
        h.extend_from_slice(&total.to_be_bytes());
        h.extend_from_slice(&[0, 1]);
        h.extend_from_slice(&frag.to_be_bytes());
        h.extend_from_slice(&[64, proto, 0, 0]);
        h.extend_from_slice(&src);
        h.extend_from_slice(&dst);
        h.extend_from_slice(body);
        h
    }

    fn udp(sp: u16, dp: u16, payload: &[u8]) -> Vec<u8> {
        let mut u = sp.to_be_bytes().to_vec();
        u.extend_from_slice(&dp.to_be_bytes());
        u.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
        u.extend_from_slice(&[0, 0]);
        u.extend_from_slice(payload);
        u
    }

    fn tcp(sp: u16, dp: u16, seq: u32, flags: u8, payload: &[u8]) -> Vec<u8> {
        let mut t = sp.to_be_bytes().to_vec();
        t.extend_from_slice(&dp.to_be_bytes());
        t.extend_from_slice(&seq.to_be_bytes());
        t.extend_from_slice(&0u32.to_be_bytes());
        t.extend_from_slice(&[0x50, flags, 0xff, 0xff, 0, 0, 0, 0]);
        t.extend_from_slice(payload);
        t
    }

    const UNI: [u8; 6] = [0x02, 0, 0, 0, 0, 0x20];

    #[test]
    fn udp_over_ipv4() {
        let frame = eth(UNI, 0x0800, &ipv4([10, 0, 0, 1], [10, 0, 0, 2], 17, 0, &udp(5353, 53, b"hi")));
        let p = decode_packet(&RawPacket::new(1, 2, frame)).unwrap();
        assert_eq!(p.ports(), Some((5353, 53)));
        assert_eq!(p.payload, b"hi");
        assert_eq!(p.traffic_mode, TrafficMode::Unicast);
        assert_eq!(p.ip.unwrap().ttl, 64);
    }

    #[test]
    fn ethernet_padding_is_trimmed() {
        let mut frame = eth(UNI, 0x0800, &ipv4([10, 0, 0, 1], [10, 0, 0, 2], 6, 0, &tcp(1, 2, 7, 0x18, b"ab")));
        frame.extend_from_slice(&[0u8; 6]);
        let p = decode_packet(&RawPacket::new(0, 0, frame)).unwrap();
        assert_eq!(p.payload, b"ab");
        assert_eq!(p.tcp_seq(), Some(7));
        assert!(p.tcp_flags().unwrap().ack());
    }

    #[test]
    fn vlan_tag_is_transparent() {
        let inner = ipv4([10, 0, 0, 1], [10, 0, 0, 2], 17, 0, &udp(1, 2, b"x"));
        let mut tagged = vec![0x00, 0x05, 0x08, 0x00];
        tagged.extend_from_slice(&inner);
        let frame = eth(UNI, 0x8100, &tagged);
        let p = decode_packet(&RawPacket::new(0, 0, frame)).unwrap();
        assert_eq!(p.ether_type, 0x0800);
        assert_eq!(p.payload, b"x");
    }

    #[test]
    fn traffic_modes() {
        let m = eth([0x01, 0, 0x5e, 0x7f, 0xff, 0xfa], 0x0800, &ipv4([10, 0, 0, 1], [239, 255, 255, 250], 17, 0, &udp(1, 1900, b"")));
        assert_eq!(decode_packet(&RawPacket::new(0, 0, m)).unwrap().traffic_mode, TrafficMode::Multicast);
        let b = eth([0xff; 6], 0x0800, &ipv4([0, 0, 0, 0], [255, 255, 255, 255], 17, 0, &udp(68, 67, b"")));
        assert_eq!(decode_packet(&RawPacket::new(0, 0, b)).unwrap().traffic_mode, TrafficMode::Broadcast);
        let sub = eth([0xff; 6], 0x0800, &ipv4([10, 0, 0, 1], [10, 0, 0, 255], 17, 0, &udp(1, 2, b"")));
        assert_eq!(decode_packet(&RawPacket::new(0, 0, sub)).unwrap().traffic_mode, TrafficMode::Broadcast);
    }

    #[test]
    fn non_first_fragment_is_skipped() {
        let frame = eth(UNI, 0x0800, &ipv4([10, 0, 0, 1], [10, 0, 0, 2], 17, 185, &[0u8; 16]));
        assert_eq!(decode_packet(&RawPacket::new(0, 0, frame)), Err(DecodeError::NonFirstFragment));
    }

    #[test]
    fn first_fragment_with_long_udp_length_is_accepted() {
        let mut body = udp(1, 2, &[7u8; 20]);
        body[4..6].copy_from_slice(&2000u16.to_be_bytes());
        let frame = eth(UNI, 0x0800, &ipv4([10, 0, 0, 1], [10, 0, 0, 2], 17, 0x2000, &body));
        let p = decode_packet(&RawPacket::new(0, 0, frame)).unwrap();
        assert_eq!(p.payload.len(), 20);
    }

    #[test]
    fn total_length_beyond_frame_is_malformed_unless_snapped() {
        let mut ip = ipv4([10, 0, 0, 1], [10, 0, 0, 2], 17, 0, &udp(1, 2, b"abcd"));
        ip[2..4].copy_from_slice(&400u16.to_be_bytes());
        let frame = eth(UNI, 0x0800, &ip);
        assert!(decode_packet(&RawPacket::new(0, 0, frame.clone())).is_err());
        let mut raw = RawPacket::new(0, 0, frame);
        raw.original_len = 414;
        assert!(decode_packet(&raw).is_ok());
    }

    #[test]
    fn ipv6_with_extension_header() {
        let mut v6 = vec![0x60, 0, 0, 0];
        let mut ext = vec![17u8, 0, 0, 0, 0, 0, 0, 0];
        ext.extend_from_slice(&udp(546, 547, b"v6"));
        v6.extend_from_slice(&(ext.len() as u16).to_be_bytes());
        v6.push(0);
        v6.push(1);
        v6.extend_from_slice(&[0xfe, 0x80, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
        v6.extend_from_slice(&[0xff, 0x02, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 2]);
        v6.extend_from_slice(&ext);
        let frame = eth([0x33, 0x33, 0, 1, 0, 2], 0x86dd, &v6);
        let p = decode_packet(&RawPacket::new(0, 0, frame)).unwrap();
        assert_eq!(p.ports(), Some((546, 547)));
        assert_eq!(p.payload, b"v6");
        assert_eq!(p.traffic_mode, TrafficMode::Multicast);
        assert_eq!(p.ip.unwrap().ttl, 1);
    }

    #[test]
    fn non_ip_frames_decode_without_transport() {
        let frame = eth([0xff; 6], 0x0806, &[0u8; 28]);
        let p = decode_packet(&RawPacket::new(0, 0, frame)).unwrap();
        assert!(p.ip.is_none());
        assert_eq!(p.transport, Transport::Other);
        assert_eq!(p.traffic_mode, TrafficMode::Broadcast);
    }

    #[test]
    fn mac_parse_and_display() {
        let m: MacAddr = "0A:1b:2c:3d:4e:5f".parse().unwrap();
        assert_eq!(m.to_string(), "0a:1b:2c:3d:4e:5f");
        assert!("0a:1b:2c".parse::<MacAddr>().is_err());
        assert!("zz:1b:2c:3d:4e:5f".parse::<MacAddr>().is_err());
    }

    #[test]
    fn short_frames_are_malformed() {
        for n in 0..14 {
            assert!(decode_packet(&RawPacket::new(0, 0, vec![0; n])).is_err());
        }
    }
}
