//! Lenient reader for the metrics text-exposition format, limited to the
//! two mesh TCP byte-counter families.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrafficSample;

/// Metric family and label names used to pull samples out of an
/// exposition. Mesh versions differ, so every name is overridable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelMap {
    pub sent_family: String,
    pub received_family: String,
    pub source_label: String,
    pub dest_label: String,
    pub namespace_label: String,
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap {
            sent_family: "istio_tcp_sent_bytes_total".into(),
            received_family: "istio_tcp_received_bytes_total".into(),
            source_label: "source_workload".into(),
            dest_label: "destination_workload".into(),
            namespace_label: "destination_service_namespace".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedExposition {
    pub samples: Vec<TrafficSample>,
    pub errors: Vec<LineError>,
}

#[derive(Debug, Clone, PartialEq)]
struct MetricLine {
    name: String,
    labels: Vec<(String, String)>,
    value: f64,
    timestamp_ms: Option<i64>,
}

fn parse_value(tok: &str) -> Option<f64> {
    match tok {
        "+Inf" | "Inf" => Some(f64::INFINITY),
        "-Inf" => Some(f64::NEG_INFINITY),
        "NaN" => Some(f64::NAN),
        _ => tok.parse().ok(),
    }
}

fn is_name_char(c: char, first: bool) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == ':' || (!first && c.is_ascii_digit())
}

fn parse_line(line: &str) -> Result<MetricLine, String> {
    let line = line.trim();
    let name_end = line
        .char_indices()
        .find(|&(i, c)| !is_name_char(c, i == 0))
        .map(|(i, _)| i)
        .unwrap_or(line.len());
    if name_end == 0 {
        return Err("expected metric name".into());
    }
    let name = line[..name_end].to_string();
    let mut rest = &line[name_end..];
    let mut labels = Vec::new();

    if let Some(body) = rest.strip_prefix('{') {
        let mut chars = body.char_indices().peekable();
        let mut consumed = None;
        loop {
            while matches!(chars.peek(), Some((_, c)) if c.is_whitespace() || *c == ',') {
                chars.next();
            }
            match chars.peek() {
                Some(&(i, '}')) => {
                    consumed = Some(i + 1);
                    break;
                }
                None => break,
                _ => {}
            }
            let mut key = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c == '=' || c.is_whitespace() {
                    break;
                }
                key.push(c);
                chars.next();
            }
            while matches!(chars.peek(), Some((_, c)) if c.is_whitespace()) {
                chars.next();
            }
            if key.is_empty() || !matches!(chars.next(), Some((_, '='))) {
                return Err(format!("malformed label near `{key}`"));
            }
            if !matches!(chars.next(), Some((_, '"'))) {
                return Err(format!("label `{key}` value must be quoted"));
            }
            let mut val = String::new();
            let mut closed = false;
            while let Some((_, c)) = chars.next() {
                match c {
                    '\\' => match chars.next() {
                        Some((_, 'n')) => val.push('\n'),
                        Some((_, '\\')) => val.push('\\'),
                        Some((_, '"')) => val.push('"'),
                        Some((_, other)) => {
                            val.push('\\');
                            val.push(other);
                        }
                        None => break,
                    },
                    '"' => {
                        closed = true;
                        break;
                    }
                    c => val.push(c),
                }
            }
            if !closed {
                return Err(format!("unterminated value for label `{key}`"));
            }
            labels.push((key, val));
        }
        let end = consumed.ok_or("unterminated label set")?;
        rest = &body[end..];
    }

    let mut toks = rest.split_whitespace();
    let value_tok = toks.next().ok_or("missing sample value")?;
    let value = parse_value(value_tok).ok_or_else(|| format!("invalid sample value `{value_tok}`"))?;
    let timestamp_ms = match toks.next() {
        Some(t) => Some(t.parse::<i64>().map_err(|_| format!("invalid timestamp `{t}`"))?),
        None => None,
    };
    if let Some(extra) = toks.next() {
        return Err(format!("unexpected trailing token `{extra}`"));
    }
    Ok(MetricLine {
        name,
        labels,
        value,
        timestamp_ms,
    })
}

/// Parses an exposition; lines without a timestamp are stamped with
/// `scrape_ts` (seconds). Sent and received counters for the same stream
/// and instant are merged into one sample; a missing half carries the
/// stream's previous value forward.
pub fn parse_exposition_with(text: &str, labels: &LabelMap, scrape_ts: f64) -> ParsedExposition {
    type Key = (Option<String>, String, String);
    #[derive(Default, Clone, Copy)]
    struct Halves {
        sent: Option<f64>,
        received: Option<f64>,
    }
    let mut errors = Vec::new();
    // stream -> [(timestamp, halves)]
    let mut streams: BTreeMap<Key, Vec<(f64, Halves)>> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let m = match parse_line(trimmed) {
            Ok(m) => m,
            Err(message) => {
                errors.push(LineError { line: idx + 1, message });
                continue;
            }
        };
        let is_sent = m.name == labels.sent_family;
        if !is_sent && m.name != labels.received_family {
            continue;
        }
        let get = |k: &str| m.labels.iter().find(|(lk, _)| lk == k).map(|(_, v)| v.clone());
        let (Some(src), Some(dst)) = (get(&labels.source_label), get(&labels.dest_label)) else {
            errors.push(LineError {
                line: idx + 1,
                message: format!("counter lacks `{}`/`{}` labels", labels.source_label, labels.dest_label),
            });
            continue;
        };
        if !m.value.is_finite() || m.value < 0.0 {
            errors.push(LineError {
                line: idx + 1,
                message: format!("counter value {} is not a finite non-negative number", m.value),
            });
            continue;
        }
        let ts = m.timestamp_ms.map(|t| t as f64 / 1000.0).unwrap_or(scrape_ts);
        let entries = streams.entry((get(&labels.namespace_label), src, dst)).or_default();
        let slot = match entries.iter_mut().find(|(t, _)| *t == ts) {
            Some((_, h)) => h,
            None => {
                entries.push((ts, Halves::default()));
                &mut entries.last_mut().unwrap().1
            }
        };
        // Multiple series for one stream (e.g. differing by other labels) add up.
        let target = if is_sent { &mut slot.sent } else { &mut slot.received };
        *target = Some(target.unwrap_or(0.0) + m.value);
    }

    let mut samples = Vec::new();
    for ((ns, src, dst), mut entries) in streams {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut last_sent, mut last_recv) = (0.0, 0.0);
        for (ts, h) in entries {
            last_sent = h.sent.unwrap_or(last_sent);
            last_recv = h.received.unwrap_or(last_recv);
            samples.push(TrafficSample {
                timestamp: ts,
                source_ms: src.clone(),
                dest_ms: dst.clone(),
                sent_bytes_total: last_sent,
                received_bytes_total: last_recv,
                namespace: ns.clone(),
            });
        }
    }
    samples.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| a.source_ms.cmp(&b.source_ms))
            .then_with(|| a.dest_ms.cmp(&b.dest_ms))
    });
    ParsedExposition { samples, errors }
}

pub fn parse_exposition(text: &str) -> ParsedExposition {
    parse_exposition_with(text, &LabelMap::default(), 0.0)
}

/// Renders samples back into exposition text with millisecond timestamps.
pub fn render_exposition(samples: &[TrafficSample], labels: &LabelMap) -> String {
    let mut out = String::new();
    for (family, pick) in [(&labels.sent_family, true), (&labels.received_family, false)] {
        out.push_str(&format!("# TYPE {family} counter\n"));
        for s in samples {
            let mut l = format!(
                "{family}{{{}=\"{}\",{}=\"{}\"",
                labels.source_label, s.source_ms, labels.dest_label, s.dest_ms
            );
            if let Some(ns) = &s.namespace {
                l.push_str(&format!(",{}=\"{ns}\"", labels.namespace_label));
            }
            let v = if pick {
                s.sent_bytes_total
            } else {
                s.received_bytes_total
            };
            l.push_str(&format!("}} {v} {}\n", (s.timestamp * 1000.0).round() as i64));
            out.push_str(&l);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_comments() {
        assert_eq!(parse_exposition(""), ParsedExposition::default());
        let r = parse_exposition("# HELP x y\n# TYPE istio_tcp_sent_bytes_total counter\n\n");
        assert!(r.samples.is_empty() && r.errors.is_empty());
    }

    #[test]
    fn single_sent_counter() {
        let text = r#"istio_tcp_sent_bytes_total{source_workload="compose-post-service",destination_workload="text-service",destination_service_namespace="social"} 1.2e6"#;
        let r = parse_exposition(text);
        assert!(r.errors.is_empty(), "{:?}", r.errors);
        assert_eq!(r.samples.len(), 1);
        let s = &r.samples[0];
        assert_eq!(s.sent_bytes_total, 1_200_000.0);
        assert_eq!(s.received_bytes_total, 0.0);
        assert_eq!(s.source_ms, "compose-post-service");
        assert_eq!(s.dest_ms, "text-service");
        assert_eq!(s.namespace.as_deref(), Some("social"));
    }

    #[test]
    fn merges_halves_and_timestamps() {
        let text = "\
istio_tcp_sent_bytes_total{source_workload=\"a\",destination_workload=\"b\"} 100 1000
istio_tcp_received_bytes_total{source_workload=\"a\",destination_workload=\"b\"} 40 1000
istio_tcp_sent_bytes_total{source_workload=\"a\",destination_workload=\"b\"} 300 4000
some_other_metric{x=\"1\"} 5
";
        let r = parse_exposition(text);
        assert!(r.errors.is_empty());
        assert_eq!(
            r.samples,
            vec![
                TrafficSample::new(1.0, "a", "b", 100.0, 40.0),
                TrafficSample::new(4.0, "a", "b", 300.0, 40.0),
            ]
        );
    }

    #[test]
    fn errors_carry_line_numbers_and_parsing_continues() {
        let text = "\
istio_tcp_sent_bytes_total{source_workload=\"a\",destination_workload=\"b\"} 1
istio_tcp_sent_bytes_total{source_workload=\"a\" 2
{broken} 3
istio_tcp_sent_bytes_total{source_workload=\"a\",destination_workload=\"c\"} notanumber
istio_tcp_received_bytes_total{source_workload=\"a\",destination_workload=\"c\"} 9
";
        let r = parse_exposition(text);
        let lines: Vec<_> = r.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 3, 4]);
        assert_eq!(r.samples.len(), 2);
    }

    #[test]
    fn escaped_label_values() {
        let text = r#"istio_tcp_sent_bytes_total{source_workload="a\"x",destination_workload="b\\y"} 7"#;
        let r = parse_exposition(text);
        assert_eq!(r.samples[0].source_ms, "a\"x");
        assert_eq!(r.samples[0].dest_ms, "b\\y");
    }

    #[test]
    fn custom_label_map() {
        let labels = LabelMap {
            sent_family: "tcp_sent".into(),
            received_family: "tcp_recv".into(),
            source_label: "src".into(),
            dest_label: "dst".into(),
            namespace_label: "ns".into(),
        };
        let r = parse_exposition_with("tcp_recv{src=\"a\",dst=\"b\",ns=\"n\"} 5\n", &labels, 12.0);
        assert_eq!(r.samples[0].timestamp, 12.0);
        assert_eq!(r.samples[0].received_bytes_total, 5.0);
    }

    #[test]
    fn render_parse_roundtrip() {
        let mut s = TrafficSample::new(3.0, "a", "b", 10.0, 20.0);
        s.namespace = Some("ns".into());
        let text = render_exposition(&[s.clone()], &LabelMap::default());
        assert_eq!(parse_exposition(&text).samples, vec![s]);
    }
}
