use std::collections::HashMap;

use super::{distinct_labels, seconds_to_us, FlowKey, FlowRecord, IngestError, LabeledSequence, BENIGN};

/// Flows grouped by key and ordered by start, for interval lookups.
pub struct FlowIndex<'a> {
    by_key: HashMap<FlowKey, Vec<&'a FlowRecord>>,
    window_us: u64,
}

impl<'a> FlowIndex<'a> {
    pub fn new(flows: &'a [FlowRecord], window_s: f64) -> Self {
        let mut by_key: HashMap<FlowKey, Vec<&FlowRecord>> = HashMap::new();
        for f in flows {
            by_key.entry(f.flow_key()).or_default().push(f);
        }
        for v in by_key.values_mut() {
            v.sort_by_key(|f| f.start_us);
        }
        Self {
            by_key,
            window_us: seconds_to_us(window_s),
        }
    }

    /// First flow (by start time) with this key whose
    /// `[start, start + duration + window]` interval contains `ts`.
    pub fn lookup(&self, key: Option<FlowKey>, ts: u64) -> Option<&'a FlowRecord> {
        self.by_key.get(&key?)?.iter().copied().find(|f| {
            f.start_us <= ts && ts <= f.end_us().saturating_add(self.window_us)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignOutcome {
    pub sequence: LabeledSequence,
    /// Packets no flow claimed; they carry the default label.
    pub unmatched: usize,
}

pub fn align(
    flows: &[FlowRecord],
    packets: &LabeledSequence,
    window_s: f64,
) -> Result<AlignOutcome, IngestError> {
    align_with_default(flows, packets, window_s, BENIGN)
}

pub fn align_with_default(
    flows: &[FlowRecord],
    packets: &LabeledSequence,
    window_s: f64,
    default_label: &str,
) -> Result<AlignOutcome, IngestError> {
    if !(window_s > 0.0) {
        return Err(IngestError::InvalidArgument(format!(
            "alignment window must be > 0, got {window_s}"
        )));
    }
    let index = FlowIndex::new(flows, window_s);
    let mut unmatched = 0;
    let records = packets
        .records
        .iter()
        .map(|p| {
            let mut p = p.clone();
            match index.lookup(p.flow_key, p.timestamp_us) {
                Some(f) => p.label = f.label.clone(),
                None => {
                    unmatched += 1;
                    p.label = default_label.to_string();
                }
            }
            p
        })
        .collect::<Vec<_>>();
    if unmatched > 0 {
        log::warn!("{unmatched} packets matched no flow; labeled `{default_label}`");
    }
    let class_set = distinct_labels(&records);
    Ok(AlignOutcome {
        sequence: LabeledSequence::with_classes(records, class_set),
        unmatched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PacketRecord;

    fn flow(start_s: f64, duration: f64, label: &str) -> FlowRecord {
        FlowRecord {
            src_addr: "10.0.0.1".into(),
            dst_addr: "10.0.0.9".into(),
            src_port: 4444,
            dst_port: 22,
            protocol: "TCP".into(),
            start_us: (start_s * 1e6) as u64,
            duration,
            packet_count: 3,
            byte_count: 300,
            rates: Default::default(),
            label: label.into(),
            aux: Default::default(),
        }
    }

    fn packet(ts_s: f64, key: FlowKey) -> PacketRecord {
        let mut p = PacketRecord::new((ts_s * 1e6) as u64, vec![0; 4], "");
        p.flow_key = Some(key);
        p
    }

    #[test]
    fn no_flows_leaves_everything_unmatched() {
        let key = flow(0.0, 1.0, "x").flow_key();
        let seq = LabeledSequence::new(vec![packet(1.0, key), packet(2.0, key)]);
        let out = align(&[], &seq, 1.0).unwrap();
        assert_eq!(out.unmatched, 2);
        assert!(out.sequence.records.iter().all(|r| r.label == BENIGN));
    }

    #[test]
    fn covering_flow_matches_all() {
        let f = flow(10.0, 5.0, "brute_force");
        let key = f.flow_key();
        let seq = LabeledSequence::new((0..5).map(|i| packet(10.0 + i as f64, key)).collect());
        let out = align(&[f], &seq, 0.5).unwrap();
        assert_eq!(out.unmatched, 0);
        assert_eq!(out.sequence.len(), 5);
        assert!(out.sequence.records.iter().all(|r| r.label == "brute_force"));
    }

    #[test]
    fn interval_boundaries() {
        let window = 2.0;
        let f = flow(10.0, 5.0, "dos");
        let key = f.flow_key();
        // interval oracle: matched iff start <= ts <= start + duration + window
        let cases = [
            (9.999, false),
            (10.0, true),
            (15.0 + window / 2.0, true),
            (17.0, true),
            (17.001, false),
        ];
        for (ts, expect) in cases {
            let seq = LabeledSequence::new(vec![packet(ts, key)]);
            let out = align(std::slice::from_ref(&f), &seq, window).unwrap();
            assert_eq!(out.unmatched == 0, expect, "ts={ts}");
        }
    }

    #[test]
    fn never_drops_packets_and_rejects_bad_window() {
        let f = flow(0.0, 1.0, "dos");
        let seq = LabeledSequence::new(vec![packet(0.5, f.flow_key()), PacketRecord::new(3, vec![], "")]);
        assert_eq!(align(std::slice::from_ref(&f), &seq, 1.0).unwrap().sequence.len(), 2);
        assert!(align(&[f], &seq, 0.0).is_err());
    }
}
