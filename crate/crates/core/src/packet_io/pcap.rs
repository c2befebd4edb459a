use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use thiserror::Error;

pub const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_NANOS: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const DEFAULT_SNAPLEN: u32 = 65_535;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
// Anything larger than this in a record header is treated as corruption.
const MAX_RECORD_LEN: u32 = 256 * 1024 * 1024;

/// One capture record, exactly as stored in the file.
///
/// `captured_len` is not stored separately; it is always `data.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawPacket {
    pub ts_sec: u32,
    pub ts_usec: u32,
    pub original_len: u32,
    pub data: Vec<u8>,
}

impl RawPacket {
    pub fn new(ts_sec: u32, ts_usec: u32, data: Vec<u8>) -> Self {
        let original_len = data.len() as u32;
        RawPacket {
            ts_sec,
            ts_usec,
            original_len,
            data,
        }
    }

    pub fn captured_len(&self) -> u32 {
        self.data.len() as u32
    }

    /// True when the capture snapped the frame shorter than it was on the wire.
    pub fn is_snapped(&self) -> bool {
        self.captured_len() < self.original_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u32(self, b: [u8; 4]) -> u32 {
        match self {
            ByteOrder::Little => u32::from_le_bytes(b),
            ByteOrder::Big => u32::from_be_bytes(b),
        }
    }

    fn u16(self, b: [u8; 2]) -> u16 {
        match self {
            ByteOrder::Little => u16::from_le_bytes(b),
            ByteOrder::Big => u16::from_be_bytes(b),
        }
    }

    fn put_u32(self, v: u32) -> [u8; 4] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn put_u16(self, v: u16) -> [u8; 2] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub byte_order: ByteOrder,
    pub version_major: u16,
    pub version_minor: u16,
    pub thiszone: i32,
    pub sigfigs: u32,
    pub snaplen: u32,
    pub linktype: u32,
}

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported capture format (magic {0:#010x})")]
    UnsupportedFormat(u32),
    #[error("unsupported link type {0}; only Ethernet (1) is supported")]
    UnsupportedLinkType(u32),
    #[error("file is shorter than the 24-byte pcap global header")]
    TruncatedHeader,
}

/// Streaming reader over a classic pcap file.
pub struct PcapReader<R> {
    inner: R,
    header: PcapHeader,
    truncated: bool,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, PcapError> {
        let mut buf = [0u8; GLOBAL_HEADER_LEN];
        if read_full(&mut inner, &mut buf)? < GLOBAL_HEADER_LEN {
            return Err(PcapError::TruncatedHeader);
        }
        let magic_le = u32::from_le_bytes(buf[0..4].try_into().unwrap());
        let byte_order = if magic_le == PCAP_MAGIC {
            ByteOrder::Little
        } else if magic_le == PCAP_MAGIC.swap_bytes() {
            ByteOrder::Big
        } else if magic_le == PCAP_MAGIC_NANOS || magic_le == PCAP_MAGIC_NANOS.swap_bytes() {
            return Err(PcapError::UnsupportedFormat(PCAP_MAGIC_NANOS));
        } else {
            return Err(PcapError::UnsupportedFormat(magic_le));
        };
        let o = byte_order;
        let header = PcapHeader {
            byte_order,
            version_major: o.u16(buf[4..6].try_into().unwrap()),
            version_minor: o.u16(buf[6..8].try_into().unwrap()),
            thiszone: o.u32(buf[8..12].try_into().unwrap()) as i32,
            sigfigs: o.u32(buf[12..16].try_into().unwrap()),
            snaplen: o.u32(buf[16..20].try_into().unwrap()),
            linktype: o.u32(buf[20..24].try_into().unwrap()),
        };
        if header.linktype != LINKTYPE_ETHERNET {
            return Err(PcapError::UnsupportedLinkType(header.linktype));
        }
        Ok(PcapReader {
            inner,
            header,
            truncated: false,
            done: false,
        })
    }

    pub fn header(&self) -> &PcapHeader {
        &self.header
    }

    /// Whether a trailing partial record was dropped.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    fn next_record(&mut self) -> Result<Option<RawPacket>, PcapError> {
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut hdr)?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            self.mark_truncated("partial record header");
            return Ok(None);
        }
        let o = self.header.byte_order;
        let ts_sec = o.u32(hdr[0..4].try_into().unwrap());
        let ts_usec = o.u32(hdr[4..8].try_into().unwrap());
        let incl_len = o.u32(hdr[8..12].try_into().unwrap());
        let mut original_len = o.u32(hdr[12..16].try_into().unwrap());
        if incl_len > MAX_RECORD_LEN {
            self.mark_truncated("record length is implausible");
            return Ok(None);
        }
        let mut data = vec![0u8; incl_len as usize];
        if read_full(&mut self.inner, &mut data)? < data.len() {
            self.mark_truncated("record data runs past end of file");
            return Ok(None);
        }
        if original_len < incl_len {
            warn!("pcap record with captured length {incl_len} > original length {original_len}");
            original_len = incl_len;
        }
        Ok(Some(RawPacket {
            ts_sec,
            ts_usec,
            original_len,
            data,
        }))
    }

    fn mark_truncated(&mut self, why: &str) {
        warn!("truncated capture: {why}; trailing record dropped");
        self.truncated = true;
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawPacket, PcapError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(p)) => Some(Ok(p)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// A fully loaded capture.
#[derive(Debug, Clone)]
pub struct Capture {
    pub header: PcapHeader,
    pub packets: Vec<RawPacket>,
    pub truncated: bool,
}

pub fn read_pcap(path: impl AsRef<Path>) -> Result<Capture, PcapError> {
    let file = File::open(path.as_ref())?;
    read_pcap_from(BufReader::new(file))
}

pub fn read_pcap_from<R: Read>(reader: R) -> Result<Capture, PcapError> {
    let mut rd = PcapReader::new(reader)?;
    let mut packets = Vec::new();
    for p in rd.by_ref() {
        packets.push(p?);
    }
    Ok(Capture {
        header: *rd.header(),
        truncated: rd.truncated(),
        packets,
    })
}

/// Writes a little-endian (0xa1b2c3d4 read natively on x86) pcap file.
pub fn write_pcap(path: impl AsRef<Path>, packets: &[RawPacket]) -> Result<(), PcapError> {
    write_pcap_ordered(path, packets, ByteOrder::Little)
}

pub fn write_pcap_ordered(
    path: impl AsRef<Path>,
    packets: &[RawPacket],
    order: ByteOrder,
) -> Result<(), PcapError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_pcap_to(&mut w, packets, order)?;
    w.flush()?;
    Ok(())
}

pub fn write_pcap_to<W: Write>(
    w: &mut W,
    packets: &[RawPacket],
    order: ByteOrder,
) -> Result<(), PcapError> {
    let snaplen = packets
        .iter()
        .map(|p| p.captured_len())
        .max()
        .unwrap_or(0)
        .max(DEFAULT_SNAPLEN);
    w.write_all(&order.put_u32(PCAP_MAGIC))?;
    w.write_all(&order.put_u16(2))?;
    w.write_all(&order.put_u16(4))?;
    w.write_all(&order.put_u32(0))?;
    w.write_all(&order.put_u32(0))?;
    w.write_all(&order.put_u32(snaplen))?;
    w.write_all(&order.put_u32(LINKTYPE_ETHERNET))?;
    for p in packets {
        w.write_all(&order.put_u32(p.ts_sec))?;
        w.write_all(&order.put_u32(p.ts_usec))?;
        w.write_all(&order.put_u32(p.captured_len()))?;
        w.write_all(&order.put_u32(p.original_len.max(p.captured_len())))?;
        w.write_all(&p.data)?;
    }
    Ok(())
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_bytes(packets: &[RawPacket], order: ByteOrder) -> Vec<u8> {
        let mut out = Vec::new();
        write_pcap_to(&mut out, packets, order).unwrap();
        out
    }

    fn sample(n: usize) -> Vec<RawPacket> {
        (0..n)
            .map(|i| RawPacket::new(1_500_000_000 + i as u32, i as u32 * 1000, vec![i as u8; 60 + i]))
            .collect()
    }

    #[test]
    fn empty_capture_is_header_only() {
        let bytes = to_bytes(&[], ByteOrder::Little);
        assert_eq!(bytes.len(), 24);
        let cap = read_pcap_from(&bytes[..]).unwrap();
        assert!(cap.packets.is_empty());
        assert!(!cap.truncated);
    }

    #[test]
    fn file_size_arithmetic() {
        let p = RawPacket::new(1, 2, vec![0xab; 60]);
        assert_eq!(to_bytes(&[p], ByteOrder::Little).len(), 24 + 16 + 60);
    }

    #[test]
    fn round_trip_three_packets() {
        let pkts = sample(3);
        let cap = read_pcap_from(&to_bytes(&pkts, ByteOrder::Little)[..]).unwrap();
        assert_eq!(cap.packets, pkts);
        assert_eq!(cap.header.byte_order, ByteOrder::Little);
        assert_eq!((cap.header.version_major, cap.header.version_minor), (2, 4));
    }

    #[test]
    fn swapped_magic_reads_identically() {
        let pkts = sample(2);
        let native = read_pcap_from(&to_bytes(&pkts, ByteOrder::Little)[..]).unwrap();
        let swapped_bytes = to_bytes(&pkts, ByteOrder::Big);
        assert_eq!(&swapped_bytes[0..4], &[0xa1, 0xb2, 0xc3, 0xd4]);
        let swapped = read_pcap_from(&swapped_bytes[..]).unwrap();
        assert_eq!(swapped.header.byte_order, ByteOrder::Big);
        assert_eq!(native.packets, swapped.packets);
    }

    #[test]
    fn bad_magic_and_nanosecond_magic_are_rejected() {
        let mut bytes = to_bytes(&[], ByteOrder::Little);
        bytes[0..4].copy_from_slice(&0x0a0d0d0au32.to_le_bytes());
        assert!(matches!(
            read_pcap_from(&bytes[..]),
            Err(PcapError::UnsupportedFormat(0x0a0d0d0a))
        ));
        bytes[0..4].copy_from_slice(&PCAP_MAGIC_NANOS.to_le_bytes());
        assert!(matches!(read_pcap_from(&bytes[..]), Err(PcapError::UnsupportedFormat(_))));
    }

    #[test]
    fn non_ethernet_linktype_is_rejected() {
        let mut bytes = to_bytes(&[], ByteOrder::Little);
        bytes[20..24].copy_from_slice(&101u32.to_le_bytes());
        assert!(matches!(
            read_pcap_from(&bytes[..]),
            Err(PcapError::UnsupportedLinkType(101))
        ));
    }

    #[test]
    fn truncated_trailing_record_is_dropped() {
        let pkts = sample(3);
        let mut bytes = to_bytes(&pkts, ByteOrder::Little);
        bytes.truncate(bytes.len() - 5);
        let cap = read_pcap_from(&bytes[..]).unwrap();
        assert_eq!(cap.packets, pkts[..2]);
        assert!(cap.truncated);

        let mut bytes = to_bytes(&pkts, ByteOrder::Little);
        bytes.extend_from_slice(&[1, 2, 3]);
        let cap = read_pcap_from(&bytes[..]).unwrap();
        assert_eq!(cap.packets, pkts);
        assert!(cap.truncated);
    }

    #[test]
    fn short_global_header() {
        assert!(matches!(
            read_pcap_from(&[0xd4, 0xc3, 0xb2][..]),
            Err(PcapError::TruncatedHeader)
        ));
    }

    #[test]
    fn snapped_records_keep_original_length() {
        let mut p = RawPacket::new(5, 6, vec![1; 40]);
        p.original_len = 1500;
        let cap = read_pcap_from(&to_bytes(&[p.clone()], ByteOrder::Little)[..]).unwrap();
        assert_eq!(cap.packets[0], p);
        assert!(cap.packets[0].is_snapped());
    }
}
