//! Classic libpcap capture files (microsecond resolution, both byte orders).

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use super::{normalize_payload, FlowKey, IngestError, LabeledSequence, PacketRecord};

const MAGIC_USEC: u32 = 0xA1B2_C3D4;
const MAGIC_USEC_SWAPPED: u32 = 0xD4C3_B2A1;
const MAGIC_NSEC: u32 = 0xA1B2_3C4D;
const MAGIC_NSEC_SWAPPED: u32 = 0x4D3C_B2A1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;
const LINKTYPE_LINUX_SLL: u32 = 113;
const LINKTYPE_IPV4: u32 = 228;
const LINKTYPE_IPV6: u32 = 229;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Big,
    Little,
}

/// Which bytes of a frame become the packet payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PayloadMode {
    /// Whole captured frame, link and network headers included.
    #[default]
    Full,
    /// Bytes after the transport header; frames that fail to parse keep all bytes.
    Transport,
}

#[derive(Debug, Clone, Copy)]
pub struct PcapOptions {
    pub max_payload_len: usize,
    pub payload_mode: PayloadMode,
}

impl Default for PcapOptions {
    fn default() -> Self {
        Self {
            max_payload_len: super::DEFAULT_MAX_PAYLOAD_LEN,
            payload_mode: PayloadMode::Full,
        }
    }
}

pub fn read_pcap(path: impl AsRef<Path>, opts: PcapOptions) -> Result<LabeledSequence, IngestError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    parse_pcap(&bytes, opts)
}

struct Reader<'a> {
    buf: &'a [u8],
    order: ByteOrder,
}

impl Reader<'_> {
    fn u32_at(&self, off: usize) -> u32 {
        let b: [u8; 4] = self.buf[off..off + 4].try_into().expect("4 bytes");
        match self.order {
            ByteOrder::Big => u32::from_be_bytes(b),
            ByteOrder::Little => u32::from_le_bytes(b),
        }
    }
}

pub fn parse_pcap(bytes: &[u8], opts: PcapOptions) -> Result<LabeledSequence, IngestError> {
    if bytes.len() < 4 {
        return Err(IngestError::UnsupportedFormat(
            "file shorter than capture magic".into(),
        ));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    let order = match magic {
        MAGIC_USEC => ByteOrder::Big,
        MAGIC_USEC_SWAPPED => ByteOrder::Little,
        MAGIC_NSEC | MAGIC_NSEC_SWAPPED => {
            return Err(IngestError::UnsupportedFormat(
                "nanosecond-resolution capture (magic 0xA1B23C4D) is not accepted".into(),
            ))
        }
        other => {
            return Err(IngestError::UnsupportedFormat(format!(
                "bad magic 0x{other:08X}"
            )))
        }
    };
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(IngestError::CorruptCapture {
            offset: bytes.len(),
            reason: "truncated global header".into(),
        });
    }
    let rd = Reader { buf: bytes, order };
    let linktype = rd.u32_at(20);

    let mut records = Vec::new();
    let mut off = GLOBAL_HEADER_LEN;
    while off < bytes.len() {
        if off + RECORD_HEADER_LEN > bytes.len() {
            return Err(IngestError::CorruptCapture {
                offset: off,
                reason: format!(
                    "truncated record header ({} of {RECORD_HEADER_LEN} bytes)",
                    bytes.len() - off
                ),
            });
        }
        let ts_sec = rd.u32_at(off) as u64;
        let ts_usec = rd.u32_at(off + 4) as u64;
        let incl_len = rd.u32_at(off + 8) as usize;
        let data_start = off + RECORD_HEADER_LEN;
        if data_start + incl_len > bytes.len() {
            return Err(IngestError::CorruptCapture {
                offset: off,
                reason: format!("record data of {incl_len} bytes runs past end of file"),
            });
        }
        let frame = &bytes[data_start..data_start + incl_len];
        let parsed = parse_frame(frame, linktype);
        let payload = match (opts.payload_mode, &parsed) {
            (PayloadMode::Transport, Some(p)) => frame[p.payload_offset..].to_vec(),
            _ => frame.to_vec(),
        };
        let mut rec = PacketRecord::new(
            ts_sec * 1_000_000 + ts_usec,
            normalize_payload(payload, opts.max_payload_len),
            String::new(),
        );
        rec.flow_key = parsed.map(|p| p.key);
        records.push(rec);
        off = data_start + incl_len;
    }
    Ok(LabeledSequence::with_classes(records, Vec::new()))
}

struct ParsedFrame {
    key: FlowKey,
    payload_offset: usize,
}

fn parse_frame(frame: &[u8], linktype: u32) -> Option<ParsedFrame> {
    let ip_off = match linktype {
        LINKTYPE_ETHERNET => {
            let mut off = 12;
            let mut ethertype = u16::from_be_bytes(frame.get(off..off + 2)?.try_into().ok()?);
            // 802.1Q tags
            while ethertype == 0x8100 || ethertype == 0x88A8 {
                off += 4;
                ethertype = u16::from_be_bytes(frame.get(off..off + 2)?.try_into().ok()?);
            }
            if ethertype != 0x0800 && ethertype != 0x86DD {
                return None;
            }
            off + 2
        }
        LINKTYPE_LINUX_SLL => 16,
        LINKTYPE_RAW | LINKTYPE_IPV4 | LINKTYPE_IPV6 => 0,
        _ => return None,
    };
    parse_ip(frame, ip_off)
}

fn parse_ip(frame: &[u8], off: usize) -> Option<ParsedFrame> {
    let version = frame.get(off)? >> 4;
    let (src, dst, proto, l4) = match version {
        4 => {
            let ihl = (frame[off] & 0x0F) as usize * 4;
            if ihl < 20 {
                return None;
            }
            let h = frame.get(off..off + 20)?;
            let src = IpAddr::V4(Ipv4Addr::new(h[12], h[13], h[14], h[15]));
            let dst = IpAddr::V4(Ipv4Addr::new(h[16], h[17], h[18], h[19]));
            (src, dst, h[9], off + ihl)
        }
        6 => {
            let h = frame.get(off..off + 40)?;
            let src: [u8; 16] = h[8..24].try_into().ok()?;
            let dst: [u8; 16] = h[24..40].try_into().ok()?;
            (
                IpAddr::V6(Ipv6Addr::from(src)),
                IpAddr::V6(Ipv6Addr::from(dst)),
                h[6],
                off + 40,
            )
        }
        _ => return None,
    };
    let (sport, dport, payload_offset) = match proto {
        6 => {
            let h = frame.get(l4..l4 + 20)?;
            let data_off = ((h[12] >> 4) as usize) * 4;
            (
                u16::from_be_bytes([h[0], h[1]]),
                u16::from_be_bytes([h[2], h[3]]),
                (l4 + data_off.max(20)).min(frame.len()),
            )
        }
        17 => {
            let h = frame.get(l4..l4 + 8)?;
            (
                u16::from_be_bytes([h[0], h[1]]),
                u16::from_be_bytes([h[2], h[3]]),
                l4 + 8,
            )
        }
        _ => (0, 0, l4.min(frame.len())),
    };
    Some(ParsedFrame {
        key: FlowKey::from_ips(src, dst, sport, dport, proto),
        payload_offset,
    })
}

/// A frame to be written: timestamp in microseconds plus raw link-layer bytes.
#[derive(Debug, Clone)]
pub struct CaptureFrame {
    pub timestamp_us: u64,
    pub data: Vec<u8>,
}

impl CaptureFrame {
    /// Wraps `payload` in minimal Ethernet + IPv4 + TCP/UDP headers
    /// (checksums left zero). Other protocols get a bare IPv4 header.
    pub fn ipv4(
        timestamp_us: u64,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        src_port: u16,
        dst_port: u16,
        protocol: u8,
        payload: &[u8],
    ) -> Self {
        let l4: Vec<u8> = match protocol {
            6 => {
                let mut h = vec![0u8; 20];
                h[0..2].copy_from_slice(&src_port.to_be_bytes());
                h[2..4].copy_from_slice(&dst_port.to_be_bytes());
                h[12] = 5 << 4;
                h[13] = 0x18;
                h[14..16].copy_from_slice(&1024u16.to_be_bytes());
                h
            }
            17 => {
                let mut h = vec![0u8; 8];
                h[0..2].copy_from_slice(&src_port.to_be_bytes());
                h[2..4].copy_from_slice(&dst_port.to_be_bytes());
                h[4..6].copy_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
                h
            }
            _ => Vec::new(),
        };
        let total = 20 + l4.len() + payload.len();
        let mut ip = vec![0u8; 20];
        ip[0] = 0x45;
        ip[2..4].copy_from_slice(&(total as u16).to_be_bytes());
        ip[8] = 64;
        ip[9] = protocol;
        ip[12..16].copy_from_slice(&src.octets());
        ip[16..20].copy_from_slice(&dst.octets());

        let mut data = Vec::with_capacity(14 + total);
        data.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01, 0x08, 0x00]);
        data.extend_from_slice(&ip);
        data.extend_from_slice(&l4);
        data.extend_from_slice(payload);
        Self { timestamp_us, data }
    }
}

/// Writes a classic microsecond capture with the given byte order.
pub fn write_pcap(
    path: impl AsRef<Path>,
    frames: &[CaptureFrame],
    linktype: u32,
    order: ByteOrder,
) -> Result<(), IngestError> {
    let path = path.as_ref();
    let u32b = |v: u32| match order {
        ByteOrder::Big => v.to_be_bytes(),
        ByteOrder::Little => v.to_le_bytes(),
    };
    let u16b = |v: u16| match order {
        ByteOrder::Big => v.to_be_bytes(),
        ByteOrder::Little => v.to_le_bytes(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(&u32b(MAGIC_USEC));
    out.extend_from_slice(&u16b(2));
    out.extend_from_slice(&u16b(4));
    out.extend_from_slice(&u32b(0));
    out.extend_from_slice(&u32b(0));
    out.extend_from_slice(&u32b(65535));
    out.extend_from_slice(&u32b(linktype));
    for f in frames {
        out.extend_from_slice(&u32b((f.timestamp_us / 1_000_000) as u32));
        out.extend_from_slice(&u32b((f.timestamp_us % 1_000_000) as u32));
        out.extend_from_slice(&u32b(f.data.len() as u32));
        out.extend_from_slice(&u32b(f.data.len() as u32));
        out.extend_from_slice(&f.data);
    }
    std::fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(order: ByteOrder, linktype: u32) -> Vec<u8> {
        let mut h = Vec::new();
        let w32 = |v: u32| match order {
            ByteOrder::Big => v.to_be_bytes(),
            ByteOrder::Little => v.to_le_bytes(),
        };
        h.extend_from_slice(&w32(MAGIC_USEC));
        h.extend_from_slice(&match order {
            ByteOrder::Big => [0, 2, 0, 4],
            ByteOrder::Little => [2, 0, 4, 0],
        });
        h.extend_from_slice(&[0; 8]);
        h.extend_from_slice(&w32(65535));
        h.extend_from_slice(&w32(linktype));
        h
    }

    #[test]
    fn header_only_capture_is_empty() {
        for order in [ByteOrder::Big, ByteOrder::Little] {
            let seq = parse_pcap(&header(order, 1), PcapOptions::default()).unwrap();
            assert!(seq.is_empty());
        }
    }

    #[test]
    fn swapped_magic_single_record_padded_byte_for_byte() {
        // Hand-built little-endian file: "d4 c3 b2 a1" on disk.
        let mut file: Vec<u8> = vec![
            0xd4, 0xc3, 0xb2, 0xa1, 0x02, 0x00, 0x04, 0x00, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff,
            0x00, 0x00, 0x65, 0x00, 0x00, 0x00,
        ];
        // ts_sec=7, ts_usec=250, incl=60, orig=60
        file.extend_from_slice(&[7, 0, 0, 0, 0xfa, 0, 0, 0, 60, 0, 0, 0, 60, 0, 0, 0]);
        let data: Vec<u8> = (0..60u8).map(|i| i.wrapping_mul(7).wrapping_add(3)).collect();
        file.extend_from_slice(&data);

        let seq = parse_pcap(
            &file,
            PcapOptions {
                max_payload_len: 128,
                payload_mode: PayloadMode::Full,
            },
        )
        .unwrap();
        assert_eq!(seq.len(), 1);
        let rec = &seq.records[0];
        assert_eq!(rec.timestamp_us, 7_000_250);
        let mut expected = data.clone();
        expected.extend(std::iter::repeat_n(0u8, 68));
        assert_eq!(rec.payload, expected);
        assert_eq!(rec.payload.len(), 128);
    }

    #[test]
    fn records_sorted_by_timestamp() {
        let mut file = header(ByteOrder::Big, LINKTYPE_RAW);
        for ts in [5u32, 3, 4] {
            file.extend_from_slice(&ts.to_be_bytes());
            file.extend_from_slice(&0u32.to_be_bytes());
            file.extend_from_slice(&1u32.to_be_bytes());
            file.extend_from_slice(&1u32.to_be_bytes());
            file.push(ts as u8);
        }
        let seq = parse_pcap(&file, PcapOptions::default()).unwrap();
        let ts: Vec<u64> = seq.records.iter().map(|r| r.timestamp_us / 1_000_000).collect();
        assert_eq!(ts, vec![3, 4, 5]);
        assert_eq!(seq.records[0].payload[0], 3);
    }

    #[test]
    fn rejects_bad_and_nanosecond_magic() {
        let err = parse_pcap(&[0u8; 24], PcapOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::UnsupportedFormat(_)));
        let mut ns = vec![0xa1, 0xb2, 0x3c, 0x4d];
        ns.extend_from_slice(&[0; 20]);
        let err = parse_pcap(&ns, PcapOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::UnsupportedFormat(m) if m.contains("nanosecond")));
    }

    #[test]
    fn truncated_record_header_reports_offset() {
        let mut file = header(ByteOrder::Little, 1);
        file.extend_from_slice(&[1, 2, 3, 4, 5]);
        match parse_pcap(&file, PcapOptions::default()).unwrap_err() {
            IngestError::CorruptCapture { offset, .. } => assert_eq!(offset, 24),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn transport_mode_strips_headers_and_keys_flow() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pcap");
        let payload = b"hello world".to_vec();
        let frame = CaptureFrame::ipv4(
            1_000_000,
            Ipv4Addr::new(10, 0, 0, 1),
            Ipv4Addr::new(10, 0, 0, 2),
            4000,
            53,
            17,
            &payload,
        );
        write_pcap(&path, &[frame], LINKTYPE_ETHERNET, ByteOrder::Little).unwrap();
        let seq = read_pcap(
            &path,
            PcapOptions {
                max_payload_len: 16,
                payload_mode: PayloadMode::Transport,
            },
        )
        .unwrap();
        assert_eq!(&seq.records[0].payload[..11], b"hello world");
        assert_eq!(&seq.records[0].payload[11..], &[0u8; 5]);
        assert_eq!(
            seq.records[0].flow_key,
            Some(FlowKey::from_tuple("10.0.0.2", "10.0.0.1", 53, 4000, "udp"))
        );

        let full = read_pcap(&path, PcapOptions::default()).unwrap();
        assert_eq!(full.records[0].payload[12..14], [0x08, 0x00]);
    }
}
