//! Linux traffic-control script emission.
//!
//! Every node gets a classful `htb` root whose default class (`1:999`)
//! carries unmatched traffic untouched. Each destination node `j` gets its
//! own class `1:(j+1)`, a leaf qdisc with handle `(j+1)0:`, and a `u32`
//! filter on the destination address. Delay lives in a `netem` leaf, rate
//! limits in the htb class itself; both can be combined on the same class.
//!
//! Command order is root, default class, per-destination classes, leaf
//! qdiscs, filters. Shaping is egress-only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::cluster::NodeId;
use crate::error::{Error, Result};
use crate::net::{BandwidthMatrix, DelayMatrix};

pub const DEFAULT_CLASS_MINOR: u32 = 999;
/// Rate given to classes that must not throttle.
pub const UNSHAPED_RATE: &str = "10gbit";

/// `{"k8s-worker-1":"10.0.0.1", ...}`
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IpMap(pub BTreeMap<String, Ipv4Addr>);

impl IpMap {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn get(&self, name: &str) -> Option<Ipv4Addr> {
        self.0.get(name).copied()
    }

    /// `10.0.0.(i+1)` for each name, in order.
    pub fn sequential(names: &[String]) -> Self {
        IpMap(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), Ipv4Addr::new(10, 0, (i / 250) as u8, (i % 250 + 1) as u8)))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TcScript {
    pub node: NodeId,
    pub interface: String,
    pub lines: Vec<String>,
    pub reserved_default: bool,
}

impl TcScript {
    /// Executable shell text, one command per line.
    pub fn render(&self) -> String {
        let mut out = String::from("#!/bin/sh\nset -e\n");
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn teardown(&self) -> String {
        format!("#!/bin/sh\ntc qdisc del dev {} root\n", self.interface)
    }
}

/// Per-destination shaping of one class.
#[derive(Debug, Clone, Copy)]
struct Shape {
    delay_ms: Option<u64>,
    rate_mbit: Option<f64>,
}

pub fn class_minor(dest: usize) -> u32 {
    dest as u32 + 1
}

fn fmt_rate(mbit: f64) -> String {
    if mbit.fract() == 0.0 {
        format!("{}mbit", mbit as u64)
    } else {
        format!("{mbit}mbit")
    }
}

/// Emits scripts for a cluster whose node `i` is named `names[i]`.
#[derive(Debug, Clone)]
pub struct TcEmitter<'a> {
    pub names: &'a [String],
    pub ips: &'a IpMap,
    pub interface: &'a str,
}

impl<'a> TcEmitter<'a> {
    pub fn new(names: &'a [String], ips: &'a IpMap, interface: &'a str) -> Self {
        TcEmitter { names, ips, interface }
    }

    pub fn delay_script(&self, node: NodeId, delays: &DelayMatrix) -> Result<TcScript> {
        self.check_dim(delays.n)?;
        self.build(node, |j| Shape {
            delay_ms: Some(delays.get(node.0, j)),
            rate_mbit: None,
        })
    }

    pub fn bandwidth_script(&self, node: NodeId, bandwidths: &BandwidthMatrix) -> Result<TcScript> {
        self.check_dim(bandwidths.n)?;
        self.build(node, |j| Shape {
            delay_ms: None,
            rate_mbit: bandwidths.get(node.0, j),
        })
    }

    /// Rate-limited htb class with a netem delay leaf under it.
    pub fn combined_script(
        &self,
        node: NodeId,
        delays: &DelayMatrix,
        bandwidths: &BandwidthMatrix,
    ) -> Result<TcScript> {
        self.check_dim(delays.n)?;
        self.check_dim(bandwidths.n)?;
        self.build(node, |j| Shape {
            delay_ms: Some(delays.get(node.0, j)),
            rate_mbit: bandwidths.get(node.0, j),
        })
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.names.len() {
            return Err(Error::Shape(format!(
                "matrix is {n}x{n} but {} nodes are named",
                self.names.len()
            )));
        }
        Ok(())
    }

    fn build(&self, node: NodeId, shape: impl Fn(usize) -> Shape) -> Result<TcScript> {
        if self.interface.is_empty() {
            return Err(Error::validation("interface name is empty"));
        }
        if node.0 >= self.names.len() {
            return Err(Error::unknown("node", node.to_string()));
        }
        let dev = self.interface;
        let mut dests = Vec::new();
        for (j, name) in self.names.iter().enumerate() {
            if j == node.0 {
                continue;
            }
            let ip = self.ips.get(name).ok_or_else(|| Error::MissingIp(name.clone()))?;
            dests.push((j, ip, shape(j)));
        }

        let mut lines = Vec::with_capacity(2 + 3 * dests.len());
        lines.push(format!(
            "tc qdisc add dev {dev} root handle 1: htb default {DEFAULT_CLASS_MINOR}"
        ));
        lines.push(format!(
            "tc class add dev {dev} parent 1: classid 1:{DEFAULT_CLASS_MINOR} htb rate {UNSHAPED_RATE}"
        ));
        for (j, _, s) in &dests {
            let rate = s.rate_mbit.map(fmt_rate).unwrap_or_else(|| UNSHAPED_RATE.to_string());
            lines.push(format!(
                "tc class add dev {dev} parent 1: classid 1:{} htb rate {rate} ceil {rate}",
                class_minor(*j)
            ));
        }
        for (j, _, s) in &dests {
            let minor = class_minor(*j);
            let mut leaf = format!("tc qdisc add dev {dev} parent 1:{minor} handle {minor}0: ");
            match s.delay_ms {
                Some(ms) => write!(leaf, "netem delay {ms}ms").unwrap(),
                None => leaf.push_str("pfifo"),
            }
            lines.push(leaf);
        }
        for (j, ip, _) in &dests {
            lines.push(format!(
                "tc filter add dev {dev} protocol ip parent 1: prio 1 u32 match ip dst {ip}/32 flowid 1:{}",
                class_minor(*j)
            ));
        }
        Ok(TcScript {
            node,
            interface: dev.to_string(),
            lines,
            reserved_default: true,
        })
    }
}

pub fn emit_delay_script(
    node: NodeId,
    matrix: &DelayMatrix,
    names: &[String],
    ips: &IpMap,
    interface: &str,
) -> Result<TcScript> {
    TcEmitter::new(names, ips, interface).delay_script(node, matrix)
}

pub fn emit_bandwidth_script(
    node: NodeId,
    matrix: &BandwidthMatrix,
    names: &[String],
    ips: &IpMap,
    interface: &str,
) -> Result<TcScript> {
    TcEmitter::new(names, ips, interface).bandwidth_script(node, matrix)
}
