//! Scheduling-policy contract, the bundled policies, the decision filter
//! and the SLA-triggered rescheduling loop.

mod filter;
mod heuristics;
mod hybrid;
mod reschedule;
mod workspace;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterState, PodInfo, SchedulingDecision};
use crate::error::{Error, Result};
use crate::graph::CallGraph;
use crate::net::{BandwidthMatrix, DelayMatrix};
use crate::sim::WindowStats;

pub use filter::{filter_decisions, DecisionFilter, MoveHistory, DEFAULT_COOLDOWN_S, DEFAULT_MAX_MOVES};
pub use heuristics::{
    policy_bandwidth_aware, policy_callgraph_aware, policy_latency_aware, DEFAULT_PERCENTILE, DEFAULT_TOP_K,
};
pub use hybrid::{
    brute_force_mapping, mapping_cost, policy_hybrid, random_instance, solve_mapping, MappingSolution,
    DEFAULT_BRUTE_FORCE_LIMIT,
};
pub use reschedule::{rescheduling_loop, write_event_log, LoopConfig, LoopEvent, LoopOutcome, NetworkRefresh};

/// Contract every policy implements. Policies see immutable cluster
/// snapshots; their own state changes only in `update_metrics`.
pub trait SchedulingPolicy: Send {
    fn name(&self) -> &str;

    /// Refreshes internal state from the latest observations.
    fn update_metrics(
        &mut self,
        graph: &CallGraph,
        delays: &DelayMatrix,
        bandwidths: &BandwidthMatrix,
        window: Option<&WindowStats>,
    );

    /// Proposed moves for the replicas in `pods`; other replicas stay put.
    fn schedule_batch(&self, pods: &[PodInfo], cluster: &ClusterState) -> Result<Vec<SchedulingDecision>>;

    /// Move for a single replica, if the policy wants one.
    fn schedule_pod(&self, pod: &PodInfo, cluster: &ClusterState) -> Result<Option<SchedulingDecision>> {
        let id = pod.replica_id();
        Ok(self
            .schedule_batch(std::slice::from_ref(pod), cluster)?
            .into_iter()
            .find(|d| d.replica == id))
    }
}

/// Observed state shared by the bundled policies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub graph: CallGraph,
    pub last_window: Option<WindowStats>,
}

impl Observations {
    fn update(&mut self, graph: &CallGraph, window: Option<&WindowStats>) {
        self.graph = graph.clone();
        self.last_window = window.cloned();
    }
}

macro_rules! observing_policy {
    ($ty:ident) => {
        impl $ty {
            pub fn observations(&self) -> &Observations {
                &self.obs
            }
        }
    };
}

/// Baseline that never moves anything.
#[derive(Debug, Clone, Default)]
pub struct SpreadBaseline;

impl SchedulingPolicy for SpreadBaseline {
    fn name(&self) -> &str {
        "spread"
    }

    fn update_metrics(&mut self, _: &CallGraph, _: &DelayMatrix, _: &BandwidthMatrix, _: Option<&WindowStats>) {}

    fn schedule_batch(&self, _: &[PodInfo], _: &ClusterState) -> Result<Vec<SchedulingDecision>> {
        Ok(Vec::new())
    }
}

/// Co-locates heavily communicating services.
#[derive(Debug, Clone, Default)]
pub struct CallGraphAware {
    obs: Observations,
}
observing_policy!(CallGraphAware);

impl SchedulingPolicy for CallGraphAware {
    fn name(&self) -> &str {
        "callgraph"
    }

    fn update_metrics(&mut self, graph: &CallGraph, _: &DelayMatrix, _: &BandwidthMatrix, w: Option<&WindowStats>) {
        self.obs.update(graph, w);
    }

    fn schedule_batch(&self, pods: &[PodInfo], cluster: &ClusterState) -> Result<Vec<SchedulingDecision>> {
        policy_callgraph_aware(&self.obs.graph, cluster, pods)
    }
}

/// Puts the heaviest pairs on low-delay node pairs.
#[derive(Debug, Clone)]
pub struct LatencyAware {
    pub top_k: usize,
    obs: Observations,
}
observing_policy!(LatencyAware);

impl LatencyAware {
    pub fn new(top_k: usize) -> Self {
        LatencyAware {
            top_k,
            obs: Observations::default(),
        }
    }
}

impl SchedulingPolicy for LatencyAware {
    fn name(&self) -> &str {
        "latency"
    }

    fn update_metrics(&mut self, graph: &CallGraph, _: &DelayMatrix, _: &BandwidthMatrix, w: Option<&WindowStats>) {
        self.obs.update(graph, w);
    }

    fn schedule_batch(&self, pods: &[PodInfo], cluster: &ClusterState) -> Result<Vec<SchedulingDecision>> {
        policy_latency_aware(&self.obs.graph, cluster, pods, self.top_k)
    }
}

/// Gives bandwidth-hungry pairs co-location or the widest node pair.
#[derive(Debug, Clone)]
pub struct BandwidthAware {
    pub percentile: f64,
    obs: Observations,
}
observing_policy!(BandwidthAware);

impl BandwidthAware {
    pub fn new(percentile: f64) -> Self {
        BandwidthAware {
            percentile,
            obs: Observations::default(),
        }
    }
}

impl SchedulingPolicy for BandwidthAware {
    fn name(&self) -> &str {
        "bandwidth"
    }

    fn update_metrics(&mut self, graph: &CallGraph, _: &DelayMatrix, _: &BandwidthMatrix, w: Option<&WindowStats>) {
        self.obs.update(graph, w);
    }

    fn schedule_batch(&self, pods: &[PodInfo], cluster: &ClusterState) -> Result<Vec<SchedulingDecision>> {
        policy_bandwidth_aware(&self.obs.graph, cluster, pods, self.percentile)
    }
}

/// Solves the service-node mapping problem heuristically.
#[derive(Debug, Clone, Default)]
pub struct Hybrid {
    obs: Observations,
}
observing_policy!(Hybrid);

impl SchedulingPolicy for Hybrid {
    fn name(&self) -> &str {
        "hybrid"
    }

    fn update_metrics(&mut self, graph: &CallGraph, _: &DelayMatrix, _: &BandwidthMatrix, w: Option<&WindowStats>) {
        self.obs.update(graph, w);
    }

    fn schedule_batch(&self, pods: &[PodInfo], cluster: &ClusterState) -> Result<Vec<SchedulingDecision>> {
        policy_hybrid(&self.obs.graph, cluster, pods)
    }
}

/// Policy selection as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub name: String,
    #[serde(default)]
    pub params: PolicyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub max_moves: usize,
    pub cooldown_s: f64,
    pub require_feasible: bool,
    /// Critical pairs considered by the latency-aware policy.
    pub top_k: usize,
    /// Stress percentile selecting edges for the bandwidth-aware policy.
    pub percentile: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            max_moves: DEFAULT_MAX_MOVES,
            cooldown_s: DEFAULT_COOLDOWN_S,
            require_feasible: true,
            top_k: DEFAULT_TOP_K,
            percentile: DEFAULT_PERCENTILE,
        }
    }
}

impl PolicyParams {
    pub fn filter(&self) -> DecisionFilter {
        DecisionFilter {
            max_moves_per_event: self.max_moves,
            cooldown_s: self.cooldown_s,
            require_feasible: self.require_feasible,
        }
    }
}

pub const POLICY_NAMES: [&str; 5] = ["spread", "callgraph", "latency", "bandwidth", "hybrid"];

/// Canonical policy name for `name` or one of its aliases.
pub fn canonical_policy_name(name: &str) -> Option<&'static str> {
    Some(match name {
        "spread" | "baseline" => "spread",
        "callgraph" | "callgraph-aware" | "policy1" => "callgraph",
        "latency" | "latency-aware" | "policy2" => "latency",
        "bandwidth" | "bandwidth-aware" | "policy3" => "bandwidth",
        "hybrid" | "policy4" => "hybrid",
        _ => return None,
    })
}

pub fn make_policy(name: &str, params: &PolicyParams) -> Result<Box<dyn SchedulingPolicy>> {
    if !(0.0..=1.0).contains(&params.percentile) {
        return Err(Error::validation(format!(
            "policy.params.percentile must be in [0,1], got {}",
            params.percentile
        )));
    }
    let name = canonical_policy_name(name).ok_or_else(|| Error::unknown("policy", name))?;
    Ok(match name {
        "spread" => Box::new(SpreadBaseline),
        "callgraph" => Box::new(CallGraphAware::default()),
        "latency" => Box::new(LatencyAware::new(params.top_k)),
        "bandwidth" => Box::new(BandwidthAware::new(params.percentile)),
        _ => Box::new(Hybrid::default()),
    })
}
