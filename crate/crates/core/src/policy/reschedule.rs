use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{filter_decisions, DecisionFilter, MoveHistory, SchedulingPolicy};
use crate::cluster::{ClusterState, SchedulingDecision};
use crate::error::{Error, Result};
use crate::graph::build_call_graph_over;
use crate::net::{generate_bandwidth_matrix, generate_delay_matrix, BandwidthParams, DelayParams};
use crate::sim::{window_bounds, RunMetrics, SimConfig, Simulator, SlaTarget, WindowStats};

/// Periodic regeneration of the network matrices. Refresh `k` (at
/// `k * period_s`, k >= 1) uses seeds `delay_seed + k` and
/// `bandwidth_seed + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkRefresh {
    pub period_s: f64,
    pub delay: Option<DelayParams>,
    #[serde(default)]
    pub delay_seed: u64,
    #[serde(default)]
    pub bandwidth: Option<BandwidthParams>,
    #[serde(default)]
    pub bandwidth_seed: u64,
}

impl NetworkRefresh {
    fn apply(&self, k: u64, state: &ClusterState) -> Result<ClusterState> {
        let n = state.n();
        let delays = match self.delay {
            Some(p) => generate_delay_matrix(n, p.bl, p.mal, self.delay_seed.wrapping_add(k))?,
            None => state.delays.clone(),
        };
        let bandwidths = match self.bandwidth {
            Some(p) => generate_bandwidth_matrix(n, p.min_bw, p.max_bw, self.bandwidth_seed.wrapping_add(k))?,
            None => state.bandwidths.clone(),
        };
        state.with_network(delays, bandwidths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub sla: SlaTarget,
    pub filter: DecisionFilter,
    #[serde(default)]
    pub refresh: Option<NetworkRefresh>,
    /// Also invoke the policy right after each network refresh.
    #[serde(default)]
    pub reschedule_on_refresh: bool,
}

impl LoopConfig {
    pub fn new(sla: SlaTarget) -> Self {
        LoopConfig {
            sla,
            filter: DecisionFilter::default(),
            refresh: None,
            reschedule_on_refresh: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LoopEvent {
    Window {
        start_s: f64,
        end_s: f64,
        avg_ms: f64,
        p99_ms: f64,
        count: usize,
        violated: bool,
    },
    NetworkRefresh {
        t_s: f64,
        index: u64,
    },
    Trigger {
        t_s: f64,
        cause: String,
        policy: String,
        graph_edges: usize,
        proposed: Vec<SchedulingDecision>,
        accepted: Vec<SchedulingDecision>,
        applied: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub metrics: RunMetrics,
    pub events: Vec<LoopEvent>,
    pub final_state: ClusterState,
    /// Number of policy invocations.
    pub invocations: usize,
}

impl LoopOutcome {
    pub fn triggers(&self) -> impl Iterator<Item = &LoopEvent> {
        self.events.iter().filter(|e| matches!(e, LoopEvent::Trigger { .. }))
    }
}

/// Runs `config` window by window. After each window the SLA is checked;
/// a violation (or a network refresh, when enabled) calls the policy with
/// the call-graph of the last window's traffic, filters the proposed
/// moves, applies them and resumes the simulation. The decision queue is
/// discarded after every trigger.
pub fn rescheduling_loop(
    policy: &mut dyn SchedulingPolicy,
    config: &SimConfig,
    loop_cfg: &LoopConfig,
) -> Result<LoopOutcome> {
    loop_cfg.filter.validate()?;
    if let Some(r) = &loop_cfg.refresh {
        if !(r.period_s > 0.0 && r.period_s.is_finite()) {
            return Err(Error::validation(format!(
                "refresh period must be > 0, got {}",
                r.period_s
            )));
        }
    }
    let mut sim = Simulator::new(config)?;
    let mut state = config.cluster.clone();
    let mut history = MoveHistory::new();
    let mut events = Vec::new();
    let mut invocations = 0;
    let horizon = sim.horizon_s();
    let windows = window_bounds(config.window_s, horizon);

    // boundaries: window ends and refresh instants, merged
    let mut refreshes: Vec<(u64, f64)> = Vec::new();
    if let Some(r) = &loop_cfg.refresh {
        let mut k = 1u64;
        while (k as f64) * r.period_s < horizon - 1e-9 {
            refreshes.push((k, k as f64 * r.period_s));
            k += 1;
        }
    }
    let mut boundaries: Vec<f64> = windows
        .iter()
        .map(|w| w.1)
        .chain(refreshes.iter().map(|r| r.1))
        .collect();
    boundaries.sort_by(f64::total_cmp);
    boundaries.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut next_window = 0usize;
    let mut next_refresh = 0usize;
    for b in boundaries {
        sim.run_until(b);
        let mut refreshed = false;
        while next_refresh < refreshes.len() && (refreshes[next_refresh].1 - b).abs() < 1e-9 {
            let (k, t) = refreshes[next_refresh];
            state = loop_cfg.refresh.as_ref().unwrap().apply(k, &state)?;
            sim.set_network(state.delays.clone(), state.bandwidths.clone())?;
            events.push(LoopEvent::NetworkRefresh { t_s: t, index: k });
            refreshed = true;
            next_refresh += 1;
        }
        let mut stats: Option<WindowStats> = None;
        let mut violated = false;
        if next_window < windows.len() && (windows[next_window].1 - b).abs() < 1e-9 {
            let (ws, we) = windows[next_window];
            let s = sim.window_stats(ws, we);
            violated = loop_cfg.sla.violated_by(&s);
            events.push(LoopEvent::Window {
                start_s: ws,
                end_s: we,
                avg_ms: s.avg_ms,
                p99_ms: s.p99_ms,
                count: s.count,
                violated,
            });
            stats = Some(s);
            next_window += 1;
        }
        let on_refresh = refreshed && loop_cfg.reschedule_on_refresh;
        if !(violated || on_refresh) || b >= horizon - 1e-9 {
            continue;
        }
        let cause = match (violated, on_refresh) {
            (true, true) => "sla+refresh",
            (true, false) => "sla",
            _ => "refresh",
        };
        invocations += 1;
        let start = (b - config.window_s).max(0.0);
        let samples = sim.traffic_samples_at(&[start, b]);
        let graph = build_call_graph_over(state.placement.services(), &samples, b - start)?;
        policy.update_metrics(&graph, &state.delays, &state.bandwidths, stats.as_ref());
        let mut error = None;
        let mut proposed = match policy.schedule_batch(&state.pods, &state) {
            Ok(d) => d,
            Err(e) => {
                error = Some(e.to_string());
                Vec::new()
            }
        };
        for d in &mut proposed {
            d.issued_at = b;
        }
        let accepted = filter_decisions(&proposed, &loop_cfg.filter, &state, &history, b)?;
        let mut applied = 0;
        if !accepted.is_empty() {
            match state.apply_decisions(&accepted) {
                Ok(next) => {
                    sim.set_placement(&next.placement)?;
                    for d in &accepted {
                        history.record(&d.replica, b);
                    }
                    applied = accepted.len();
                    state = next;
                }
                Err(e) => error = Some(e.to_string()),
            }
        }
        events.push(LoopEvent::Trigger {
            t_s: b,
            cause: cause.into(),
            policy: policy.name().into(),
            graph_edges: graph.edges.len(),
            proposed,
            accepted,
            applied,
            error,
        });
    }
    Ok(LoopOutcome {
        metrics: sim.finish(),
        events,
        final_state: state,
        invocations,
    })
}

/// One JSON object per line.
pub fn write_event_log<W: Write>(mut w: W, events: &[LoopEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    Ok(())
}
