use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One scrape of the cumulative byte counters for a caller -> callee
/// stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSample {
    /// Seconds.
    pub timestamp: f64,
    /// Upstream (caller) service.
    pub source_ms: String,
    /// Downstream (callee) service.
    pub dest_ms: String,
    pub sent_bytes_total: f64,
    pub received_bytes_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
}

impl TrafficSample {
    pub fn new(timestamp: f64, source: &str, dest: &str, sent: f64, received: f64) -> Self {
        TrafficSample {
            timestamp,
            source_ms: source.to_string(),
            dest_ms: dest.to_string(),
            sent_bytes_total: sent,
            received_bytes_total: received,
            namespace: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    ts: f64,
    src: String,
    dst: String,
    sent_total: f64,
    recv_total: f64,
    #[serde(default)]
    namespace: Option<String>,
}

/// Reads `ts,src,dst,sent_total,recv_total[,namespace]`; an empty
/// namespace means none.
pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TrafficSample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        let mut s = TrafficSample::new(row.ts, &row.src, &row.dst, row.sent_total, row.recv_total);
        s.namespace = row.namespace.filter(|n| !n.is_empty());
        out.push(s);
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(writer: W, samples: &[TrafficSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(CsvRow {
            ts: s.timestamp,
            src: s.source_ms.clone(),
            dst: s.dest_ms.clone(),
            sent_total: s.sent_bytes_total,
            recv_total: s.received_bytes_total,
            namespace: s.namespace.clone(),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let mut tagged = TrafficSample::new(5.0, "a", "b", 1000.0, 250.5);
        tagged.namespace = Some("social".into());
        let samples = vec![TrafficSample::new(0.0, "a", "b", 0.0, 0.0), tagged];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ts,src,dst,sent_total,recv_total,namespace\n"));
        assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), samples);
    }
}
