//! Classic pcap I/O and link/network/transport header decoding.

mod decode;
mod pcap;

pub use decode::{
    decode_packet, traffic_mode_of, DecodeError, IpInfo, MacAddr, MacParseError, ParsedPacket,
    TcpFlags, Timestamp, TrafficMode, Transport, ETHERTYPE_IPV4, ETHERTYPE_IPV6, IPPROTO_TCP,
    IPPROTO_UDP,
};
pub use pcap::{
    read_pcap, read_pcap_from, write_pcap, write_pcap_ordered, write_pcap_to, ByteOrder, Capture,
    PcapError, PcapHeader, PcapReader, RawPacket, DEFAULT_SNAPLEN, LINKTYPE_ETHERNET, PCAP_MAGIC,
};

/// Counters for packets that never reach flow assembly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecodeStats {
    pub packets: usize,
    pub malformed: usize,
    pub non_first_fragments: usize,
}

/// Decodes every record, counting and dropping the ones that fail.
pub fn decode_all(raw: &[RawPacket]) -> (Vec<ParsedPacket>, DecodeStats) {
    let mut stats = DecodeStats {
        packets: raw.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        match decode_packet(r) {
            Ok(p) => out.push(p),
            Err(DecodeError::NonFirstFragment) => stats.non_first_fragments += 1,
            Err(e) => {
                log::debug!("dropping packet at {}.{:06}: {e}", r.ts_sec, r.ts_usec);
                stats.malformed += 1;
            }
        }
    }
    (out, stats)
}
