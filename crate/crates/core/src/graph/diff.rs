use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::CallGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeight {
    pub um: String,
    pub dm: String,
    pub stress_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightChange {
    pub um: String,
    pub dm: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// Structural and weight difference between two call-graphs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphDelta {
    pub added_nodes: Vec<String>,
    pub removed_nodes: Vec<String>,
    pub added_edges: Vec<EdgeWeight>,
    pub removed_edges: Vec<(String, String)>,
    pub weight_changes: Vec<WeightChange>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.added_edges.is_empty()
            && self.removed_edges.is_empty()
            && self.weight_changes.is_empty()
    }

    pub fn apply(&self, g: &CallGraph) -> CallGraph {
        let mut out = g.clone();
        for (u, d) in &self.removed_edges {
            out.edges.remove(&(u.clone(), d.clone()));
        }
        for n in &self.removed_nodes {
            out.nodes.remove(n);
        }
        for n in &self.added_nodes {
            out.nodes.insert(n.clone());
        }
        for e in &self.added_edges {
            out.edges.insert((e.um.clone(), e.dm.clone()), e.stress_bps);
        }
        for c in &self.weight_changes {
            out.edges.insert((c.um.clone(), c.dm.clone()), c.after);
        }
        out
    }
}

pub fn graph_diff(g1: &CallGraph, g2: &CallGraph) -> GraphDelta {
    let added_nodes = g2.nodes.difference(&g1.nodes).cloned().collect();
    let removed_nodes = g1.nodes.difference(&g2.nodes).cloned().collect();
    let mut delta = GraphDelta {
        added_nodes,
        removed_nodes,
        ..Default::default()
    };
    let keys: BTreeSet<_> = g1.edges.keys().chain(g2.edges.keys()).collect();
    for key in keys {
        match (g1.edges.get(key), g2.edges.get(key)) {
            (None, Some(&w)) => delta.added_edges.push(EdgeWeight {
                um: key.0.clone(),
                dm: key.1.clone(),
                stress_bps: w,
            }),
            (Some(_), None) => delta.removed_edges.push(key.clone()),
            (Some(&a), Some(&b)) if a != b => delta.weight_changes.push(WeightChange {
                um: key.0.clone(),
                dm: key.1.clone(),
                before: a,
                after: b,
                delta: b - a,
            }),
            _ => {}
        }
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(edges: &[(&str, &str, f64)]) -> CallGraph {
        let mut g = CallGraph::new();
        for (u, d, w) in edges {
            g.add_edge(u, d, *w).unwrap();
        }
        g
    }

    #[test]
    fn identity() {
        let a = g(&[("a", "b", 1.0), ("b", "c", 2.0)]);
        assert!(graph_diff(&a, &a).is_empty());
    }

    #[test]
    fn single_added_edge() {
        let a = g(&[("A", "C", 1.0)]);
        let mut b = a.clone();
        b.add_edge("A", "B", 10.0).unwrap();
        let d = graph_diff(&a, &b);
        assert_eq!(d.added_nodes, vec!["B".to_string()]);
        assert_eq!(
            d.added_edges,
            vec![EdgeWeight {
                um: "A".into(),
                dm: "B".into(),
                stress_bps: 10.0
            }]
        );
        assert!(d.removed_edges.is_empty() && d.weight_changes.is_empty());
        assert_eq!(d.apply(&a), b);
    }

    #[test]
    fn weight_change() {
        let a = g(&[("a", "b", 100.0)]);
        let b = g(&[("a", "b", 150.0)]);
        let d = graph_diff(&a, &b);
        assert_eq!(d.weight_changes.len(), 1);
        assert_eq!(d.weight_changes[0].delta, 50.0);
        assert_eq!(d.apply(&a), b);
    }

    #[test]
    fn removal_applies() {
        let a = g(&[("a", "b", 1.0), ("b", "c", 1.0)]);
        let b = g(&[("a", "b", 1.0)]);
        let d = graph_diff(&a, &b);
        assert_eq!(d.removed_nodes, vec!["c".to_string()]);
        assert_eq!(d.apply(&a), b);
    }
}
