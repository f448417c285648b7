//! Flow tables in CSV form, mapped onto canonical columns by a schema file.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{seconds_to_us, FlowRecord, IngestError};

/// Canonical columns every flow row must provide.
pub const REQUIRED_COLUMNS: [&str; 10] = [
    "src_addr",
    "dst_addr",
    "src_port",
    "dst_port",
    "protocol",
    "start",
    "duration",
    "packet_count",
    "byte_count",
    "label",
];

/// Canonical name -> CSV column name. Canonical names outside
/// [`REQUIRED_COLUMNS`] are parsed as real-valued statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaMap {
    pub columns: BTreeMap<String, String>,
}

impl Default for SchemaMap {
    /// Identity mapping for the required columns.
    fn default() -> Self {
        Self {
            columns: REQUIRED_COLUMNS
                .iter()
                .map(|c| (c.to_string(), c.to_string()))
                .collect(),
        }
    }
}

impl SchemaMap {
    pub fn with_rate(mut self, canonical: &str, column: &str) -> Self {
        self.columns.insert(canonical.into(), column.into());
        self
    }

    /// Parses a TOML key-value file; missing required keys default to identity.
    pub fn from_toml_str(s: &str) -> Result<Self, IngestError> {
        let mut columns: BTreeMap<String, String> =
            toml::from_str(s).map_err(|e| IngestError::SchemaMap(e.to_string()))?;
        for c in REQUIRED_COLUMNS {
            columns.entry(c.to_string()).or_insert_with(|| c.to_string());
        }
        Ok(Self { columns })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::from_toml_str(&s)
    }
}

/// A data row that could not be converted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// Zero-based data row index (header excluded).
    pub row: usize,
    pub column: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    pub records: Vec<FlowRecord>,
    pub row_errors: Vec<RowError>,
}

pub fn read_flow_csv(path: impl AsRef<Path>, schema: &SchemaMap) -> Result<FlowTable, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_flow_csv_from(file, schema)
}

pub fn read_flow_csv_from<R: Read>(reader: R, schema: &SchemaMap) -> Result<FlowTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index_of = |col: &str| headers.iter().position(|h| h == col);

    let mut mapped: BTreeMap<&str, usize> = BTreeMap::new();
    for (canonical, column) in &schema.columns {
        let idx = index_of(column).ok_or_else(|| IngestError::Schema {
            column: column.clone(),
        })?;
        mapped.insert(canonical.as_str(), idx);
    }
    let mapped_idx: Vec<usize> = mapped.values().copied().collect();

    let mut table = FlowTable::default();
    for (row, result) in rdr.records().enumerate() {
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                table.row_errors.push(RowError {
                    row,
                    column: String::new(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        match convert_row(&rec, &headers, &mapped, &mapped_idx, row) {
            Ok(flow) => table.records.push(flow),
            Err(e) => table.row_errors.push(e),
        }
    }
    Ok(table)
}

fn convert_row(
    rec: &csv::StringRecord,
    headers: &csv::StringRecord,
    mapped: &BTreeMap<&str, usize>,
    mapped_idx: &[usize],
    row: usize,
) -> Result<FlowRecord, RowError> {
    let cell = |name: &str| rec.get(mapped[name]).unwrap_or("");
    let err = |name: &str, msg: String| RowError {
        row,
        column: name.to_string(),
        message: msg,
    };
    let real = |name: &str| -> Result<f64, RowError> {
        let s = cell(name);
        let v: f64 = s
            .parse()
            .map_err(|_| err(name, format!("cannot parse `{s}` as a number")))?;
        if !v.is_finite() {
            return Err(err(name, format!("non-finite value `{s}`")));
        }
        Ok(v)
    };
    let count = |name: &str| -> Result<u64, RowError> {
        let v = real(name)?;
        if v < 0.0 {
            return Err(err(name, format!("negative count {v}")));
        }
        Ok(v.round() as u64)
    };
    let port = |name: &str| -> Result<u16, RowError> {
        let v = real(name)?;
        if !(0.0..=65535.0).contains(&v) {
            return Err(err(name, format!("port {v} out of range")));
        }
        Ok(v as u16)
    };

    let duration = real("duration")?;
    if duration < 0.0 {
        return Err(err("duration", format!("negative duration {duration}")));
    }
    let start = real("start")?;
    let mut rates = BTreeMap::new();
    for &canonical in mapped.keys() {
        if !super::flows::REQUIRED_COLUMNS.contains(&canonical) {
            rates.insert(canonical.to_string(), real(canonical)?);
        }
    }
    let aux = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !mapped_idx.contains(i))
        .map(|(i, h)| (h.to_string(), rec.get(i).unwrap_or("").to_string()))
        .collect();
    Ok(FlowRecord {
        src_addr: cell("src_addr").to_string(),
        dst_addr: cell("dst_addr").to_string(),
        src_port: port("src_port")?,
        dst_port: port("dst_port")?,
        protocol: cell("protocol").to_string(),
        start_us: seconds_to_us(start),
        duration,
        packet_count: count("packet_count")?,
        byte_count: count("byte_count")?,
        rates,
        label: cell("label").to_string(),
        aux,
    })
}

/// Writes flows with canonical column names (rates appended in key order).
pub fn write_flow_csv(path: impl AsRef<Path>, flows: &[FlowRecord]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let rate_names: Vec<String> = flows
        .iter()
        .flat_map(|f| f.rates.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(rate_names.iter().cloned());
    w.write_record(&header)?;
    for f in flows {
        let mut row = vec![
            f.src_addr.clone(),
            f.dst_addr.clone(),
            f.src_port.to_string(),
            f.dst_port.to_string(),
            f.protocol.clone(),
            format!("{:.6}", f.start_us as f64 / 1e6),
            format!("{:.6}", f.duration),
            f.packet_count.to_string(),
            f.byte_count.to_string(),
            f.label.clone(),
        ];
        for r in &rate_names {
            row.push(f.rates.get(r).map(|v| format!("{v}")).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Src IP,Dst IP,Src Port,Dst Port,Protocol,Timestamp,Flow Duration,Total Packets,Total Bytes,Label,Flow Pkts/s,Note\n";

    fn schema() -> SchemaMap {
        SchemaMap::from_toml_str(
            r#"
src_addr = "Src IP"
dst_addr = "Dst IP"
src_port = "Src Port"
dst_port = "Dst Port"
protocol = "Protocol"
start = "Timestamp"
duration = "Flow Duration"
packet_count = "Total Packets"
byte_count = "Total Bytes"
label = "Label"
rate_pps = "Flow Pkts/s"
"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_table() {
        let t = read_flow_csv_from(HEADER.as_bytes(), &schema()).unwrap();
        assert!(t.records.is_empty());
        assert!(t.row_errors.is_empty());
    }

    #[test]
    fn parses_duration_and_keeps_aux() {
        let csv = format!("{HEADER}10.0.0.1,10.0.0.2,5000,80,TCP,100.5,2.5,12,900,dos,4.8,\"a, quoted\"\n");
        let t = read_flow_csv_from(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.records.len(), 1);
        let f = &t.records[0];
        assert_eq!(f.duration, 2.5);
        assert_eq!(f.start_us, 100_500_000);
        assert_eq!(f.packet_count, 12);
        assert_eq!(f.rates["rate_pps"], 4.8);
        assert_eq!(f.aux["Note"], "a, quoted");
        assert_eq!(f.label, "dos");
    }

    #[test]
    fn malformed_row_reported_with_index() {
        let csv = format!(
            "{HEADER}\
10.0.0.1,10.0.0.2,5000,80,TCP,1,2.5,12,900,dos,4.8,x\n\
10.0.0.1,10.0.0.2,5001,80,TCP,2,abc,12,900,dos,4.8,x\n\
10.0.0.1,10.0.0.2,5002,80,TCP,3,1.0,12,900,dos,4.8,x\n\
10.0.0.1,10.0.0.2,5003,80,TCP,4,1.0,12,900,benign,4.8,x\n"
        );
        let t = read_flow_csv_from(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.records.len(), 3);
        assert_eq!(t.row_errors.len(), 1);
        assert_eq!(t.row_errors[0].row, 1);
        assert_eq!(t.row_errors[0].column, "duration");
    }

    #[test]
    fn missing_mapped_column_is_schema_error() {
        let s = schema().with_rate("iat_mean", "Flow IAT Mean");
        let err = read_flow_csv_from(HEADER.as_bytes(), &s).unwrap_err();
        assert!(matches!(err, IngestError::Schema { column } if column == "Flow IAT Mean"));
    }

    #[test]
    fn write_then_read_identity_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let csv = format!("{HEADER}10.0.0.1,10.0.0.2,5000,80,TCP,100.5,2.5,12,900,dos,4.8,n\n");
        let t = read_flow_csv_from(csv.as_bytes(), &schema()).unwrap();
        write_flow_csv(&p, &t.records).unwrap();
        let back = read_flow_csv(&p, &SchemaMap::default().with_rate("rate_pps", "rate_pps")).unwrap();
        assert_eq!(back.records[0].flow_key(), t.records[0].flow_key());
        assert_eq!(back.records[0].duration, 2.5);
        assert_eq!(back.records[0].rates["rate_pps"], 4.8);
    }
}
