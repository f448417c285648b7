//! Packet captures, flow tables, and the chronologically ordered labeled
//! sequences every downstream stage consumes.

mod align;
mod flows;
mod pcap;
mod split;
mod synth;

use std::collections::BTreeSet;
use std::hash::Hasher;
use std::net::IpAddr;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{align, align_with_default, AlignOutcome, FlowIndex};
pub use flows::{read_flow_csv, read_flow_csv_from, write_flow_csv, FlowTable, RowError, SchemaMap};
pub use pcap::{
    parse_pcap, read_pcap, write_pcap, ByteOrder, CaptureFrame, PayloadMode, PcapOptions,
    LINKTYPE_ETHERNET, LINKTYPE_RAW,
};
pub use split::{split_dataset, split_dataset_with, Split, DEFAULT_TEST_FRACTION};
pub use synth::{class_names, synth_dataset, synth_dataset_with, SynthConfig, SynthData};

/// Label assigned to packets no flow claims.
pub const BENIGN: &str = "benign";

/// Default payload normalization length in bytes.
pub const DEFAULT_MAX_PAYLOAD_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported capture format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt capture at byte offset {offset}: {reason}")]
    CorruptCapture { offset: usize, reason: String },
    #[error("schema error: mapped column `{column}` not found in CSV header")]
    Schema { column: String },
    #[error("schema map error: {0}")]
    SchemaMap(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl IngestError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Direction-agnostic digest of a flow 5-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowKey(pub u64);

impl FlowKey {
    /// Both directions of a conversation map to the same key.
    pub fn from_tuple(src: &str, dst: &str, src_port: u16, dst_port: u16, protocol: &str) -> Self {
        let a = (canonical_addr(src), src_port);
        let b = (canonical_addr(dst), dst_port);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut h = FnvHasher::default();
        h.write(lo.0.as_bytes());
        h.write_u8(0);
        h.write_u16(lo.1);
        h.write(hi.0.as_bytes());
        h.write_u8(0);
        h.write_u16(hi.1);
        h.write_u8(protocol_number(protocol));
        FlowKey(h.finish())
    }

    pub fn from_ips(src: IpAddr, dst: IpAddr, src_port: u16, dst_port: u16, protocol: u8) -> Self {
        Self::from_tuple(
            &src.to_string(),
            &dst.to_string(),
            src_port,
            dst_port,
            &protocol.to_string(),
        )
    }
}

fn canonical_addr(s: &str) -> String {
    match s.trim().parse::<IpAddr>() {
        Ok(ip) => ip.to_string(),
        Err(_) => s.trim().to_ascii_lowercase(),
    }
}

/// IANA protocol number for a name or numeric string; unknown names hash into
/// the unassigned range so they still key consistently.
pub fn protocol_number(protocol: &str) -> u8 {
    let p = protocol.trim();
    if let Ok(n) = p.parse::<u8>() {
        return n;
    }
    match p.to_ascii_lowercase().as_str() {
        "icmp" => 1,
        "tcp" => 6,
        "udp" => 17,
        "icmpv6" | "ipv6-icmp" => 58,
        other => {
            let mut h = FnvHasher::default();
            h.write(other.as_bytes());
            143 + (h.finish() % 110) as u8
        }
    }
}

/// One captured packet, normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Microseconds since the Unix epoch.
    pub timestamp_us: u64,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    /// Class identifier; empty until labels are attached.
    pub label: String,
    pub flow_key: Option<FlowKey>,
}

impl PacketRecord {
    pub fn new(timestamp_us: u64, payload: Vec<u8>, label: impl Into<String>) -> Self {
        Self {
            timestamp_us,
            payload,
            label: label.into(),
            flow_key: None,
        }
    }
}

/// Truncates or zero-pads `payload` to exactly `len` bytes.
pub fn normalize_payload(mut payload: Vec<u8>, len: usize) -> Vec<u8> {
    payload.resize(len, 0);
    payload
}

/// Packets in non-decreasing timestamp order plus the distinct labels they carry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub records: Vec<PacketRecord>,
    pub class_set: Vec<String>,
}

impl LabeledSequence {
    /// Stably sorts by timestamp and derives the class set from non-empty labels.
    pub fn new(mut records: Vec<PacketRecord>) -> Self {
        records.sort_by_key(|r| r.timestamp_us);
        let class_set = distinct_labels(&records);
        Self { records, class_set }
    }

    /// Keeps an explicit class order (labels absent from `records` are allowed).
    pub fn with_classes(mut records: Vec<PacketRecord>, class_set: Vec<String>) -> Self {
        records.sort_by_key(|r| r.timestamp_us);
        Self { records, class_set }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sort(&mut self) {
        self.records.sort_by_key(|r| r.timestamp_us);
    }

    pub fn is_sorted(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].timestamp_us <= w[1].timestamp_us)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.label.as_str()).collect()
    }

    /// Checks ordering and label membership; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if !self.is_sorted() {
            return Err("records are not sorted by timestamp".into());
        }
        for (i, r) in self.records.iter().enumerate() {
            if !r.label.is_empty() && !self.class_set.iter().any(|c| c == &r.label) {
                return Err(format!("record {i} label `{}` not in class set", r.label));
            }
        }
        Ok(())
    }

    /// Relabels through `map`; labels missing from `map` are kept.
    pub fn regroup(&self, map: &std::collections::BTreeMap<String, String>) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(g) = map.get(&r.label) {
                    r.label = g.clone();
                }
                r
            })
            .collect::<Vec<_>>();
        let mut classes = Vec::new();
        for c in &self.class_set {
            let g = map.get(c).unwrap_or(c);
            if !classes.contains(g) {
                classes.push(g.clone());
            }
        }
        Self {
            records,
            class_set: classes,
        }
    }
}

pub(crate) fn distinct_labels(records: &[PacketRecord]) -> Vec<String> {
    records
        .iter()
        .filter(|r| !r.label.is_empty())
        .map(|r| r.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// One flow-table row mapped onto canonical columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub src_addr: String,
    pub dst_addr: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: String,
    /// Flow start, microseconds since epoch.
    pub start_us: u64,
    /// Seconds.
    pub duration: f64,
    pub packet_count: u64,
    pub byte_count: u64,
    /// Additional mapped numeric columns (rates and other statistics).
    pub rates: std::collections::BTreeMap<String, f64>,
    pub label: String,
    /// Unmapped CSV columns, verbatim.
    pub aux: std::collections::BTreeMap<String, String>,
}

impl FlowRecord {
    pub fn flow_key(&self) -> FlowKey {
        FlowKey::from_tuple(
            &self.src_addr,
            &self.dst_addr,
            self.src_port,
            self.dst_port,
            &self.protocol,
        )
    }

    pub fn end_us(&self) -> u64 {
        self.start_us + seconds_to_us(self.duration)
    }

    /// Column value rendered for text templates: durations with 3 decimals,
    /// counts integral, other statistics with 3 decimals.
    pub fn column(&self, name: &str) -> Option<String> {
        Some(match name {
            "src_addr" => self.src_addr.clone(),
            "dst_addr" => self.dst_addr.clone(),
            "src_port" => self.src_port.to_string(),
            "dst_port" => self.dst_port.to_string(),
            "proto" | "protocol" => self.protocol.clone(),
            "duration" => format!("{:.3}", self.duration),
            "packet_count" => self.packet_count.to_string(),
            "byte_count" => self.byte_count.to_string(),
            "start" => format!("{:.3}", self.start_us as f64 / 1e6),
            "label" => self.label.replace('_', " "),
            other => {
                if let Some(v) = self.rates.get(other) {
                    format!("{v:.3}")
                } else {
                    self.aux.get(other)?.clone()
                }
            }
        })
    }
}

pub(crate) fn seconds_to_us(s: f64) -> u64 {
    if s.is_finite() && s > 0.0 {
        (s * 1e6).round() as u64
    } else {
        0
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_key_is_direction_agnostic() {
        let a = FlowKey::from_tuple("10.0.0.1", "10.0.0.2", 1234, 80, "TCP");
        let b = FlowKey::from_tuple("10.0.0.2", "10.0.0.1", 80, 1234, "6");
        assert_eq!(a, b);
        let c = FlowKey::from_tuple("10.0.0.1", "10.0.0.2", 1234, 80, "UDP");
        assert_ne!(a, c);
    }

    #[test]
    fn sort_is_stable_and_idempotent() {
        let recs = vec![
            PacketRecord::new(5, vec![1], "a"),
            PacketRecord::new(3, vec![2], "b"),
            PacketRecord::new(3, vec![3], "a"),
        ];
        let once = LabeledSequence::new(recs);
        let mut twice = once.clone();
        twice.sort();
        assert_eq!(once, twice);
        assert_eq!(once.records[0].payload, vec![2]);
        assert_eq!(once.records[1].payload, vec![3]);
        assert_eq!(once.class_set, vec!["a", "b"]);
        assert!(once.validate().is_ok());
    }

    #[test]
    fn column_formatting() {
        let f = FlowRecord {
            src_addr: "10.0.0.1".into(),
            dst_addr: "10.0.0.2".into(),
            src_port: 5000,
            dst_port: 80,
            protocol: "TCP".into(),
            start_us: 0,
            duration: 2.5,
            packet_count: 12,
            byte_count: 900,
            rates: [("rate_pps".to_string(), 4.8)].into_iter().collect(),
            label: "port_scan".into(),
            aux: Default::default(),
        };
        assert_eq!(f.column("duration").unwrap(), "2.500");
        assert_eq!(f.column("packet_count").unwrap(), "12");
        assert_eq!(f.column("rate_pps").unwrap(), "4.800");
        assert_eq!(f.column("label").unwrap(), "port scan");
        assert!(f.column("foo").is_none());
    }
}
