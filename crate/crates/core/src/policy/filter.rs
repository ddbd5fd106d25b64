use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{CapacityLedger, ClusterState, PodIndex, ReplicaId, SchedulingDecision};
use crate::error::{Error, Result};

pub const DEFAULT_COOLDOWN_S: f64 = 60.0;
pub const DEFAULT_MAX_MOVES: usize = 10;

/// Migration constraints applied to the decision queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionFilter {
    pub max_moves_per_event: usize,
    /// Minimum simulated seconds between two moves of one replica.
    pub cooldown_s: f64,
    pub require_feasible: bool,
}

impl Default for DecisionFilter {
    fn default() -> Self {
        DecisionFilter {
            max_moves_per_event: DEFAULT_MAX_MOVES,
            cooldown_s: DEFAULT_COOLDOWN_S,
            require_feasible: true,
        }
    }
}

impl DecisionFilter {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooldown_s >= 0.0 && self.cooldown_s.is_finite()) {
            return Err(Error::validation(format!(
                "cooldown_s must be >= 0, got {}",
                self.cooldown_s
            )));
        }
        Ok(())
    }
}

/// Time each replica was last moved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MoveHistory {
    last: BTreeMap<ReplicaId, f64>,
}

impl MoveHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, replica: &ReplicaId, t: f64) {
        self.last.insert(replica.clone(), t);
    }

    pub fn last_move(&self, replica: &ReplicaId) -> Option<f64> {
        self.last.get(replica).copied()
    }
}

/// Filters `queue` at time `now`:
/// 1. drops replicas still cooling down;
/// 2. keeps the `max_moves_per_event` most relevant decisions;
/// 3. with `require_feasible`, applies the rest in order and drops any that
///    would overload a node or name an unknown replica/node.
///
/// The output is a subsequence of `queue`.
pub fn filter_decisions(
    queue: &[SchedulingDecision],
    filter: &DecisionFilter,
    cluster: &ClusterState,
    history: &MoveHistory,
    now: f64,
) -> Result<Vec<SchedulingDecision>> {
    filter.validate()?;
    let cooled: Vec<usize> = (0..queue.len())
        .filter(|&i| {
            history
                .last_move(&queue[i].replica)
                .is_none_or(|t| now - t >= filter.cooldown_s)
        })
        .collect();
    let mut kept = cooled.clone();
    if kept.len() > filter.max_moves_per_event {
        kept.sort_by(|&a, &b| queue[b].relevance.total_cmp(&queue[a].relevance).then(a.cmp(&b)));
        kept.truncate(filter.max_moves_per_event);
        kept.sort_unstable();
    }
    if !filter.require_feasible {
        return Ok(kept.into_iter().map(|i| queue[i].clone()).collect());
    }
    let idx = PodIndex::new(&cluster.pods);
    let mut ledger: CapacityLedger = cluster.ledger();
    let mut placement = cluster.placement.clone();
    let mut out = Vec::new();
    for i in kept {
        let d = &queue[i];
        let Some(from) = placement.node_of(&d.replica) else {
            continue;
        };
        if d.target.0 >= cluster.n() {
            continue;
        }
        let pod = idx.get(&d.replica)?;
        ledger.deallocate(from, pod);
        if ledger.fits(d.target, pod) {
            ledger.allocate(d.target, pod);
            placement.assign(d.replica.clone(), d.target);
            out.push(d.clone());
        } else {
            ledger.allocate(from, pod);
        }
    }
    Ok(out)
}
