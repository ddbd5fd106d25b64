use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cluster::SlaMetric;
use crate::error::{Error, Result};
use crate::graph::TrafficSample;

pub(crate) const NS_PER_S: f64 = 1e9;
pub(crate) const NS_PER_MS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub request_type: String,
    pub arrival_s: f64,
    pub end_s: f64,
    pub response_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub start_s: f64,
    pub end_s: f64,
    /// Zero when `count == 0`, as are `p99_ms` and `stdev_ms`.
    pub avg_ms: f64,
    pub p99_ms: f64,
    pub stdev_ms: f64,
    pub median_ms: f64,
    pub count: usize,
}

impl WindowStats {
    /// Stats over `responses` (ms). p99 and median are nearest-rank;
    /// stdev is the population deviation.
    pub fn from_responses(start_s: f64, end_s: f64, responses: &[f64]) -> Self {
        let count = responses.len();
        if count == 0 {
            return WindowStats {
                start_s,
                end_s,
                avg_ms: 0.0,
                p99_ms: 0.0,
                stdev_ms: 0.0,
                median_ms: 0.0,
                count,
            };
        }
        let mut sorted = responses.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = count as f64;
        let avg = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
        WindowStats {
            start_s,
            end_s,
            avg_ms: avg,
            p99_ms: nearest_rank(&sorted, 0.99),
            stdev_ms: var.sqrt(),
            median_ms: nearest_rank(&sorted, 0.5),
            count,
        }
    }

    pub fn metric(&self, metric: SlaMetric) -> f64 {
        match metric {
            SlaMetric::Avg => self.avg_ms,
            SlaMetric::P99 => self.p99_ms,
        }
    }
}

/// `sorted[ceil(q * n) - 1]`
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EdgeBytes {
    pub sent: u64,
    pub received: u64,
}

/// One payload put on the wire between a caller and callee.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub t_ns: u64,
    pub um: u32,
    pub dm: u32,
    /// Caller -> callee request bytes.
    pub sent: u64,
    /// Callee -> caller response bytes.
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub requests: Vec<RequestRecord>,
    pub windows: Vec<WindowStats>,
    pub window_s: f64,
    pub horizon_s: f64,
    /// Service names indexed by `Transfer::um`/`dm`.
    pub services: Vec<String>,
    pub transfers: Vec<Transfer>,
    /// Every caller -> callee pair of the referenced templates.
    pub edge_universe: BTreeSet<(u32, u32)>,
    /// Requests that arrived but had not completed by the horizon.
    pub dropped: u64,
    /// Arrivals at or beyond the horizon, never started.
    pub truncated: u64,
}

impl RunMetrics {
    pub fn edge_totals(&self) -> BTreeMap<(String, String), EdgeBytes> {
        let mut out: BTreeMap<(String, String), EdgeBytes> = self
            .edge_universe
            .iter()
            .map(|&(u, d)| {
                (
                    (self.services[u as usize].clone(), self.services[d as usize].clone()),
                    EdgeBytes::default(),
                )
            })
            .collect();
        for t in &self.transfers {
            let e = out
                .entry((
                    self.services[t.um as usize].clone(),
                    self.services[t.dm as usize].clone(),
                ))
                .or_default();
            e.sent += t.sent;
            e.received += t.received;
        }
        out
    }

    /// Requests completed in `[start, end)`.
    pub fn responses_between(&self, start_s: f64, end_s: f64) -> Vec<f64> {
        self.requests
            .iter()
            .filter(|r| r.end_s >= start_s && r.end_s < end_s)
            .map(|r| r.response_ms)
            .collect()
    }

    /// Mean of the windowed averages over non-empty windows.
    pub fn mean_window_avg(&self) -> f64 {
        let v: Vec<f64> = self.windows.iter().filter(|w| w.count > 0).map(|w| w.avg_ms).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn write_windows_csv<W: Write>(&self, w: W, sla: Option<&SlaTarget>) -> Result<()> {
        let flags = sla.map(|s| sla_series(self, s));
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["window_start_s", "avg_ms", "p99_ms", "stdev_ms", "count", "violated"])?;
        for (i, win) in self.windows.iter().enumerate() {
            let violated = flags.as_ref().map(|f| f[i].1).unwrap_or(false);
            w.write_record([
                format!("{:.3}", win.start_s),
                format!("{:.3}", win.avg_ms),
                format!("{:.3}", win.p99_ms),
                format!("{:.3}", win.stdev_ms),
                win.count.to_string(),
                violated.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_requests_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["id", "type", "arrival_s", "response_ms"])?;
        for r in &self.requests {
            w.write_record([
                r.id.to_string(),
                r.request_type.clone(),
                format!("{:.6}", r.arrival_s),
                format!("{:.6}", r.response_ms),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaTarget {
    pub metric: SlaMetric,
    pub threshold_ms: f64,
}

impl SlaTarget {
    pub fn avg(threshold_ms: f64) -> Self {
        SlaTarget {
            metric: SlaMetric::Avg,
            threshold_ms,
        }
    }

    /// Strictly above the threshold; empty windows never violate.
    pub fn violated_by(&self, w: &WindowStats) -> bool {
        w.count > 0 && w.metric(self.metric) > self.threshold_ms
    }
}

pub fn sla_series(metrics: &RunMetrics, sla: &SlaTarget) -> Vec<(f64, bool)> {
    metrics
        .windows
        .iter()
        .map(|w| (w.start_s, sla.violated_by(w)))
        .collect()
}

/// Cumulative per-pair counters at each of `times` (seconds), covering
/// transfers issued strictly before the sample time.
pub fn traffic_samples_at(metrics: &RunMetrics, times: &[f64]) -> Vec<TrafficSample> {
    samples_at(&metrics.services, &metrics.transfers, &metrics.edge_universe, times)
}

pub(crate) fn samples_at(
    services: &[String],
    transfers: &[Transfer],
    universe: &BTreeSet<(u32, u32)>,
    times: &[f64],
) -> Vec<TrafficSample> {
    let mut pairs: BTreeSet<(u32, u32)> = universe.clone();
    pairs.extend(transfers.iter().map(|t| (t.um, t.dm)));
    let mut out = Vec::with_capacity(times.len() * pairs.len());
    let mut acc: BTreeMap<(u32, u32), EdgeBytes> = pairs.iter().map(|p| (*p, EdgeBytes::default())).collect();
    // transfers are appended in time order
    let mut cursor = 0usize;
    for &t in times {
        let limit = (t * NS_PER_S).round() as u64;
        while cursor < transfers.len() && transfers[cursor].t_ns < limit {
            let tr = &transfers[cursor];
            let e = acc.get_mut(&(tr.um, tr.dm)).unwrap();
            e.sent += tr.sent;
            e.received += tr.received;
            cursor += 1;
        }
        for (&(u, d), bytes) in &acc {
            out.push(TrafficSample::new(
                t,
                &services[u as usize],
                &services[d as usize],
                bytes.sent as f64,
                bytes.received as f64,
            ));
        }
    }
    out
}

/// Counters sampled every `window` seconds from 0 until the horizon is
/// covered.
pub fn traffic_export(metrics: &RunMetrics, window: f64) -> Result<Vec<TrafficSample>> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::validation(format!("export window must be > 0, got {window}")));
    }
    let steps = (metrics.horizon_s / window - 1e-9).ceil().max(1.0) as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * window).collect();
    Ok(traffic_samples_at(metrics, &times))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_stats_basics() {
        let w = WindowStats::from_responses(0.0, 1.0, &[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(w.avg_ms, 25.0);
        assert_eq!(w.p99_ms, 40.0);
        assert_eq!(w.median_ms, 20.0);
        assert!((w.stdev_ms - 125f64.sqrt()).abs() < 1e-12);
        let e = WindowStats::from_responses(0.0, 1.0, &[]);
        assert_eq!((e.count, e.avg_ms), (0, 0.0));
    }

    #[test]
    fn nearest_rank_p99() {
        let v: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.99), 198.0);
        assert_eq!(nearest_rank(&[5.0], 0.99), 5.0);
    }

    #[test]
    fn sla_boundaries() {
        let sla = SlaTarget::avg(150.0);
        let mk = |avg: f64| WindowStats::from_responses(0.0, 1.0, &[avg]);
        assert!(!sla.violated_by(&mk(13.0)));
        assert!(sla.violated_by(&mk(168.6)));
        assert!(!sla.violated_by(&mk(150.0)));
        assert!(!sla.violated_by(&WindowStats::from_responses(0.0, 1.0, &[])));
        let p99 = SlaTarget {
            metric: SlaMetric::P99,
            threshold_ms: 100.0,
        };
        assert!(p99.violated_by(&WindowStats::from_responses(0.0, 1.0, &[1.0, 1.0, 101.0])));
    }
}
