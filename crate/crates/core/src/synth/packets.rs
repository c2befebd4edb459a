//! Ethernet/IP/TCP/UDP frame construction with valid checksums.

use std::net::{IpAddr, SocketAddr};

use crate::packet_io::{MacAddr, ETHERTYPE_IPV4, ETHERTYPE_IPV6, IPPROTO_TCP, IPPROTO_UDP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum L4 {
    Tcp { seq: u32, ack: u32, flags: u8 },
    Udp,
}

/// RFC 1071 ones'-complement sum over `chunks`, folded and inverted.
pub(crate) fn internet_checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    let mut odd: Option<u8> = None;
    for chunk in chunks {
        for &b in *chunk {
            match odd.take() {
                Some(hi) => sum += u32::from(u16::from_be_bytes([hi, b])),
                None => odd = Some(b),
            }
        }
    }
    if let Some(hi) = odd {
        sum += u32::from(hi) << 8;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Destination MAC for an IP address: group MACs for multicast and
/// broadcast, otherwise `unicast`.
pub(crate) fn dst_mac_for(ip: IpAddr, unicast: MacAddr) -> MacAddr {
    match ip {
        IpAddr::V4(v4) if v4.is_broadcast() => MacAddr::BROADCAST,
        IpAddr::V4(v4) if v4.is_multicast() => {
            let o = v4.octets();
            MacAddr([0x01, 0x00, 0x5e, o[1] & 0x7f, o[2], o[3]])
        }
        IpAddr::V6(v6) if v6.is_multicast() => {
            let o = v6.octets();
            MacAddr([0x33, 0x33, o[12], o[13], o[14], o[15]])
        }
        _ => unicast,
    }
}

/// Locally administered MAC derived from an address, stable across runs.
pub(crate) fn derived_mac(ip: IpAddr, tag: u8) -> MacAddr {
    let tail: [u8; 4] = match ip {
        IpAddr::V4(v4) => v4.octets(),
        IpAddr::V6(v6) => {
            let o = v6.octets();
            [o[12], o[13], o[14], o[15]]
        }
    };
    MacAddr([0x02, tag, tail[0], tail[1], tail[2], tail[3]])
}

fn transport_segment(src: SocketAddr, dst: SocketAddr, l4: L4, payload: &[u8], pseudo: &[u8]) -> Vec<u8> {
    let mut seg = Vec::with_capacity(20 + payload.len());
    seg.extend_from_slice(&src.port().to_be_bytes());
    seg.extend_from_slice(&dst.port().to_be_bytes());
    let csum_at = match l4 {
        L4::Tcp { seq, ack, flags } => {
            seg.extend_from_slice(&seq.to_be_bytes());
            seg.extend_from_slice(&ack.to_be_bytes());
            seg.push(5 << 4);
            seg.push(flags);
            seg.extend_from_slice(&0xffffu16.to_be_bytes());
            seg.extend_from_slice(&[0, 0, 0, 0]);
            16
        }
        L4::Udp => {
            seg.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
            seg.extend_from_slice(&[0, 0]);
            6
        }
    };
    seg.extend_from_slice(payload);
    let mut c = internet_checksum(&[pseudo, &seg]);
    if c == 0 && l4 == L4::Udp {
        c = 0xffff;
    }
    seg[csum_at..csum_at + 2].copy_from_slice(&c.to_be_bytes());
    seg
}

/// Builds one Ethernet frame. Both addresses must share an IP family.
#[allow(clippy::too_many_arguments)]
pub(crate) fn frame(
    src_mac: MacAddr,
    dst_mac: MacAddr,
    src: SocketAddr,
    dst: SocketAddr,
    ttl: u8,
    ip_id: u16,
    l4: L4,
    payload: &[u8],
) -> Vec<u8> {
    let proto = match l4 {
        L4::Tcp { .. } => IPPROTO_TCP,
        L4::Udp => IPPROTO_UDP,
    };
    let l4_len = payload.len() + if proto == IPPROTO_TCP { 20 } else { 8 };
    let mut out = Vec::with_capacity(14 + 40 + l4_len);
    out.extend_from_slice(&dst_mac.0);
    out.extend_from_slice(&src_mac.0);
    match (src.ip(), dst.ip()) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            out.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
            let mut pseudo = Vec::with_capacity(12);
            pseudo.extend_from_slice(&s.octets());
            pseudo.extend_from_slice(&d.octets());
            pseudo.extend_from_slice(&[0, proto]);
            pseudo.extend_from_slice(&(l4_len as u16).to_be_bytes());
            let seg = transport_segment(src, dst, l4, payload, &pseudo);
            let mut ip = Vec::with_capacity(20);
            ip.extend_from_slice(&[0x45, 0]);
            ip.extend_from_slice(&((20 + seg.len()) as u16).to_be_bytes());
            ip.extend_from_slice(&ip_id.to_be_bytes());
            ip.extend_from_slice(&0x4000u16.to_be_bytes());
            ip.extend_from_slice(&[ttl, proto, 0, 0]);
            ip.extend_from_slice(&s.octets());
            ip.extend_from_slice(&d.octets());
            let c = internet_checksum(&[&ip]);
            ip[10..12].copy_from_slice(&c.to_be_bytes());
            out.extend_from_slice(&ip);
            out.extend_from_slice(&seg);
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            out.extend_from_slice(&ETHERTYPE_IPV6.to_be_bytes());
            let mut pseudo = Vec::with_capacity(40);
            pseudo.extend_from_slice(&s.octets());
            pseudo.extend_from_slice(&d.octets());
            pseudo.extend_from_slice(&(l4_len as u32).to_be_bytes());
            pseudo.extend_from_slice(&[0, 0, 0, proto]);
            let seg = transport_segment(src, dst, l4, payload, &pseudo);
            out.extend_from_slice(&[0x60, 0, 0, 0]);
            out.extend_from_slice(&(seg.len() as u16).to_be_bytes());
            out.extend_from_slice(&[proto, ttl]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
            out.extend_from_slice(&seg);
        }
        _ => panic!("mixed address families reach frame()"),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet_io::{decode_packet, RawPacket, TrafficMode, Transport};

    #[test]
    fn checksum_reference_vector() {
        // Header from the RFC 1071 worked example family: sums to 0xffff once
        // its own checksum is included.
        let hdr = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8,
            0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7,
        ];
        assert_eq!(internet_checksum(&[&hdr]), 0xb861);
        let mut with = hdr;
        with[10..12].copy_from_slice(&0xb861u16.to_be_bytes());
        assert_eq!(internet_checksum(&[&with]), 0);
        assert_eq!(internet_checksum(&[&[0x01], &[0x02]]), internet_checksum(&[&[0x01, 0x02]]));
    }

    #[test]
    fn frames_decode() {
        let src: SocketAddr = "10.0.0.2:50000".parse().unwrap();
        let dst: SocketAddr = "239.255.255.250:1900".parse().unwrap();
        let f = frame(
            derived_mac(src.ip(), 0),
            dst_mac_for(dst.ip(), MacAddr([2; 6])),
            src,
            dst,
            4,
            1,
            L4::Udp,
            b"hello",
        );
        let p = decode_packet(&RawPacket::new(0, 0, f)).unwrap();
        assert_eq!(p.payload, b"hello");
        assert_eq!(p.traffic_mode, TrafficMode::Multicast);
        assert_eq!(p.ip.unwrap().ttl, 4);

        let src6: SocketAddr = "[fd00::2]:40000".parse().unwrap();
        let dst6: SocketAddr = "[fd00::1]:443".parse().unwrap();
        let f = frame(
            MacAddr([2; 6]),
            MacAddr([4; 6]),
            src6,
            dst6,
            64,
            0,
            L4::Tcp { seq: 7, ack: 0, flags: 0x02 },
            &[],
        );
        let p = decode_packet(&RawPacket::new(0, 0, f)).unwrap();
        assert!(matches!(p.transport, Transport::Tcp { seq: 7, dst_port: 443, .. }));
    }
}
