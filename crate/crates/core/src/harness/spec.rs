use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{
    cluster_from_value, parse_cluster_file, spread_placement, uniform_nodes, ClusterState, NodeInfo, PodInfo,
};
use crate::error::{Error, Result};
use crate::net::{
    generate_bandwidth_matrix, generate_delay_matrix, BandwidthMatrix, BandwidthParams, DelayMatrix, DelayParams, IpMap,
};
use crate::policy::{canonical_policy_name, LoopConfig, NetworkRefresh, PolicySpec};
use crate::sim::{SimConfig, SlaTarget, DEFAULT_WINDOW_S};
use crate::workload::{builtin_templates, CallGraphTemplate, RequestEvent, WorkloadSpec};

/// Complete description of one experiment. Relative file references are
/// resolved against the directory of the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub cluster: ClusterSpec,
    /// Node name -> IPv4 address, used by the tc scripts. Defaults to
    /// `10.0.0.1..` in node order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ips: Option<IpMap>,
    #[serde(default = "default_interface")]
    pub interface: String,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub services: ServicesSpec,
    /// Extra or overriding templates; builtins are always available.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<String, TemplateRef>,
    pub workload: WorkloadSpec,
    #[serde(default = "default_policy")]
    pub policy: PolicySpec,
    pub sla: SlaTarget,
    #[serde(default)]
    pub sim: SimSection,
    /// Invoke the policy after every network refresh as well.
    #[serde(default)]
    pub reschedule_on_refresh: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_interface() -> String {
    "eth0".into()
}

fn default_policy() -> PolicySpec {
    PolicySpec {
        name: "spread".into(),
        params: Default::default(),
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of `file`, `nodes` or `uniform`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<UniformNodes>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformNodes {
    pub count: usize,
    pub cpu_m: u64,
    pub mem_mib: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Absent: no injected delay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelaySpec>,
    /// Absent: unshaped links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<BandwidthSpec>,
    /// Regenerates the generated matrices every period, with seed
    /// `seed + k` for the k-th refresh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_period_s: Option<f64>,
}

/// Generated (`bl`, `mal`, `seed`) or loaded from `file`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

/// Generated (`min_bw`, `max_bw`, `seed`), every link at `uniform_mbit`,
/// or loaded from `file`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_bw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_bw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_mbit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

/// Replica count and resources for every service, with per-service
/// overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServicesSpec {
    pub replicas: u32,
    pub cpu_m: u64,
    pub mem_mib: u64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, ServiceOverride>,
}

impl Default for ServicesSpec {
    fn default() -> Self {
        ServicesSpec {
            replicas: 1,
            cpu_m: 100,
            mem_mib: 128,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_mib: Option<u64>,
}

/// A builtin template by name, or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateRef {
    Builtin(String),
    Inline(CallGraphTemplate),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub window_s: f64,
    pub per_hop_overhead_ms: f64,
    /// Defaults to the workload duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            window_s: DEFAULT_WINDOW_S,
            per_hop_overhead_ms: 0.0,
            horizon_s: None,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::validation(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be >= 0, got {v}")))
    }
}

/// Parses a spec; errors name the offending field path.
pub fn parse_spec(text: &str) -> Result<ScenarioSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Error::validation(format!("spec: {inner}"))
        } else {
            invalid(&path, inner)
        }
    })
}

/// Reads and parses a spec file. Relative references resolve against its
/// directory.
pub fn load_spec(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("spec: cannot read {}: {e}", path.display())))?;
    let mut spec = parse_spec(&text)?;
    spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(spec)
}

/// Everything a run needs, resolved from a spec.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub ips: IpMap,
    pub sim: SimConfig,
    pub loop_cfg: LoopConfig,
}

impl Scenario {
    pub fn cluster(&self) -> &ClusterState {
        &self.sim.cluster
    }

    pub fn arrivals(&self) -> &[RequestEvent] {
        &self.sim.arrivals
    }

    pub fn node_names(&self) -> Vec<String> {
        self.sim.cluster.nodes.iter().map(|n| n.name.clone()).collect()
    }
}

impl ScenarioSpec {
    fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn read(&self, field: &str, p: &Path) -> Result<String> {
        let full = self.resolve_path(p);
        std::fs::read_to_string(&full).map_err(|e| invalid(field, format!("cannot read {}: {e}", full.display())))
    }

    fn nodes(&self) -> Result<Vec<NodeInfo>> {
        let c = &self.cluster;
        let given = [c.file.is_some(), c.nodes.is_some(), c.uniform.is_some()];
        if given.iter().filter(|b| **b).count() != 1 {
            return Err(invalid(
                "cluster",
                "exactly one of `file`, `nodes` or `uniform` is required",
            ));
        }
        if let Some(f) = &c.file {
            return parse_cluster_file(&self.read("cluster.file", f)?).map_err(|e| invalid("cluster.file", e));
        }
        if let Some(v) = &c.nodes {
            return cluster_from_value(&serde_json::json!({ "nodes": v })).map_err(|e| invalid("cluster.nodes", e));
        }
        let u = c.uniform.unwrap();
        if u.count == 0 {
            return Err(invalid("cluster.uniform.count", "must be >= 1"));
        }
        if u.cpu_m == 0 || u.mem_mib == 0 {
            return Err(invalid("cluster.uniform", "capacities must be > 0"));
        }
        Ok(uniform_nodes(u.count, u.cpu_m, u.mem_mib))
    }

    fn delay_params(&self) -> Result<Option<(DelayParams, u64)>> {
        let Some(d) = &self.network.delay else { return Ok(None) };
        if d.file.is_some() {
            if d.bl.is_some() || d.mal.is_some() {
                return Err(invalid("network.delay", "`file` excludes `bl`/`mal`"));
            }
            return Ok(None);
        }
        let bl = d.bl.ok_or_else(|| invalid("network.delay.bl", "missing"))?;
        let mal = d.mal.ok_or_else(|| invalid("network.delay.mal", "missing"))?;
        let seed = d
            .seed
            .ok_or_else(|| invalid("network.delay.seed", "missing (seeds must be explicit)"))?;
        non_negative("network.delay.bl", bl)?;
        non_negative("network.delay.mal", mal)?;
        Ok(Some((DelayParams { bl, mal }, seed)))
    }

    fn bandwidth_params(&self) -> Result<Option<(BandwidthParams, u64)>> {
        let Some(b) = &self.network.bandwidth else {
            return Ok(None);
        };
        let modes = [
            b.file.is_some(),
            b.uniform_mbit.is_some(),
            b.min_bw.is_some() || b.max_bw.is_some(),
        ];
        if modes.iter().filter(|m| **m).count() != 1 {
            return Err(invalid(
                "network.bandwidth",
                "exactly one of `file`, `uniform_mbit` or `min_bw`/`max_bw` is required",
            ));
        }
        if let Some(u) = b.uniform_mbit {
            positive("network.bandwidth.uniform_mbit", u)?;
        }
        if b.min_bw.is_none() && b.max_bw.is_none() {
            return Ok(None);
        }
        let min_bw = b.min_bw.ok_or_else(|| invalid("network.bandwidth.min_bw", "missing"))?;
        let max_bw = b.max_bw.ok_or_else(|| invalid("network.bandwidth.max_bw", "missing"))?;
        let seed = b
            .seed
            .ok_or_else(|| invalid("network.bandwidth.seed", "missing (seeds must be explicit)"))?;
        positive("network.bandwidth.min_bw", min_bw)?;
        if !(max_bw >= min_bw && max_bw.is_finite()) {
            return Err(invalid(
                "network.bandwidth.max_bw",
                format!("must be >= min_bw ({min_bw}), got {max_bw}"),
            ));
        }
        Ok(Some((BandwidthParams { min_bw, max_bw }, seed)))
    }

    fn delays(&self, n: usize) -> Result<DelayMatrix> {
        if let Some((p, seed)) = self.delay_params()? {
            return generate_delay_matrix(n, p.bl, p.mal, seed).map_err(|e| invalid("network.delay", e));
        }
        match self.network.delay.as_ref().and_then(|d| d.file.as_ref()) {
            Some(f) => {
                let m = DelayMatrix::from_json(&self.read("network.delay.file", f)?)
                    .map_err(|e| invalid("network.delay.file", e))?;
                if m.n != n {
                    return Err(invalid(
                        "network.delay.file",
                        format!("matrix is {0}x{0}, cluster has {n} nodes", m.n),
                    ));
                }
                Ok(m)
            }
            None => Ok(DelayMatrix::zeros(n)),
        }
    }

    fn bandwidths(&self, n: usize) -> Result<BandwidthMatrix> {
        if let Some((p, seed)) = self.bandwidth_params()? {
            return generate_bandwidth_matrix(n, p.min_bw, p.max_bw, seed).map_err(|e| invalid("network.bandwidth", e));
        }
        let Some(b) = &self.network.bandwidth else {
            return Ok(BandwidthMatrix::unlimited(n));
        };
        if let Some(u) = b.uniform_mbit {
            return Ok(BandwidthMatrix::uniform(n, u));
        }
        let f = b.file.as_ref().expect("mode checked");
        let m = BandwidthMatrix::from_json(&self.read("network.bandwidth.file", f)?)
            .map_err(|e| invalid("network.bandwidth.file", e))?;
        if m.n != n {
            return Err(invalid(
                "network.bandwidth.file",
                format!("matrix is {0}x{0}, cluster has {n} nodes", m.n),
            ));
        }
        Ok(m)
    }

    fn refresh(&self) -> Result<Option<NetworkRefresh>> {
        let Some(period_s) = self.network.refresh_period_s else {
            return Ok(None);
        };
        positive("network.refresh_period_s", period_s)?;
        let delay = self.delay_params()?;
        let bandwidth = self.bandwidth_params()?;
        if delay.is_none() && bandwidth.is_none() {
            return Err(invalid(
                "network.refresh_period_s",
                "needs a generated delay or bandwidth matrix",
            ));
        }
        Ok(Some(NetworkRefresh {
            period_s,
            delay: delay.map(|d| d.0),
            delay_seed: delay.map_or(0, |d| d.1),
            bandwidth: bandwidth.map(|b| b.0),
            bandwidth_seed: bandwidth.map_or(0, |b| b.1),
        }))
    }

    /// Builtins overlaid with the spec's own templates.
    pub fn template_registry(&self) -> Result<BTreeMap<String, CallGraphTemplate>> {
        let builtins = builtin_templates();
        let mut out = builtins.clone();
        for (name, r) in &self.templates {
            let field = format!("templates.{name}");
            let t = match r {
                TemplateRef::Builtin(b) => builtins
                    .get(b)
                    .cloned()
                    .ok_or_else(|| invalid(&field, format!("unknown builtin template `{b}`")))?,
                TemplateRef::Inline(t) => t.clone(),
            };
            t.validate().map_err(|e| invalid(&field, e))?;
            out.insert(name.clone(), t);
        }
        Ok(out)
    }

    fn pods(&self, templates: &BTreeMap<String, CallGraphTemplate>, used: &[String]) -> Result<Vec<PodInfo>> {
        let s = &self.services;
        if s.replicas == 0 {
            return Err(invalid("services.replicas", "must be >= 1"));
        }
        let mut names = std::collections::BTreeSet::new();
        for t in used {
            names.extend(templates[t].services().into_iter().map(str::to_string));
        }
        for svc in s.overrides.keys() {
            if !names.contains(svc) {
                return Err(invalid(
                    &format!("services.overrides.{svc}"),
                    "service is not used by the workload",
                ));
            }
        }
        let mut pods = Vec::new();
        for svc in names {
            let o = s.overrides.get(&svc).cloned().unwrap_or_default();
            let replicas = o.replicas.unwrap_or(s.replicas);
            if replicas == 0 {
                return Err(invalid(&format!("services.overrides.{svc}.replicas"), "must be >= 1"));
            }
            for k in 0..replicas {
                pods.push(PodInfo::new(
                    svc.clone(),
                    k,
                    o.cpu_m.unwrap_or(s.cpu_m),
                    o.mem_mib.unwrap_or(s.mem_mib),
                ));
            }
        }
        Ok(pods)
    }

    fn request_types(&self, templates: &BTreeMap<String, CallGraphTemplate>) -> Result<Vec<String>> {
        if self.workload.phases.is_empty() {
            return Err(invalid("workload.phases", "at least one phase is required"));
        }
        for (i, p) in self.workload.phases.iter().enumerate() {
            p.validate().map_err(|e| invalid(&format!("workload.phases[{i}]"), e))?;
        }
        let types = self.workload.request_types()?;
        for t in &types {
            if !templates.contains_key(t) {
                let phase = self
                    .workload
                    .phases
                    .iter()
                    .position(|p| p.resolved_mix().is_ok_and(|m| m.contains_key(t)))
                    .unwrap_or(0);
                return Err(invalid(
                    &format!("workload.phases[{phase}].mix"),
                    Error::unknown("template", t.clone()),
                ));
            }
        }
        Ok(types)
    }

    /// Validates the spec and builds the initial cluster, arrivals and
    /// loop configuration.
    pub fn resolve(&self) -> Result<Scenario> {
        if self.interface.is_empty() {
            return Err(invalid("interface", "must not be empty"));
        }
        if self.name.is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        let nodes = self.nodes()?;
        let n = nodes.len();
        let names: Vec<String> = nodes.iter().map(|x| x.name.clone()).collect();
        let ips = match &self.ips {
            Some(m) => {
                if let Some(missing) = names.iter().find(|x| m.get(x).is_none()) {
                    return Err(invalid("ips", format!("no address for node `{missing}`")));
                }
                m.clone()
            }
            None => IpMap::sequential(&names),
        };
        let delays = self.delays(n)?;
        let bandwidths = self.bandwidths(n)?;
        let refresh = self.refresh()?;

        let registry = self.template_registry()?;
        let used = self.request_types(&registry)?;
        let templates: BTreeMap<String, CallGraphTemplate> =
            used.iter().map(|t| (t.clone(), registry[t].clone())).collect();
        let pods = self.pods(&templates, &used)?;
        let placement = spread_placement(&nodes, &pods).map_err(|e| invalid("services", e))?;
        let cluster = ClusterState::new(nodes, delays, bandwidths, placement, pods)?;

        if canonical_policy_name(&self.policy.name).is_none() {
            return Err(invalid(
                "policy.name",
                Error::unknown("policy", self.policy.name.clone()),
            ));
        }
        let params = &self.policy.params;
        non_negative("policy.params.cooldown_s", params.cooldown_s)?;
        if !(0.0..=1.0).contains(&params.percentile) {
            return Err(invalid(
                "policy.params.percentile",
                format!("must be in [0,1], got {}", params.percentile),
            ));
        }
        positive("sla.threshold_ms", self.sla.threshold_ms)?;
        positive("sim.window_s", self.sim.window_s)?;
        non_negative("sim.per_hop_overhead_ms", self.sim.per_hop_overhead_ms)?;
        let duration = self.workload.total_duration();
        let horizon_s = self.sim.horizon_s.unwrap_or(duration);
        positive("sim.horizon_s", horizon_s)?;

        let arrivals = self.workload.generate().map_err(|e| invalid("workload", e))?;
        if let Some(last) = arrivals.last() {
            if horizon_s < last.arrival_time {
                return Err(invalid(
                    "sim.horizon_s",
                    format!("{horizon_s} ends before the last arrival at {}", last.arrival_time),
                ));
            }
        }
        let mut sim = SimConfig::new(cluster, templates, arrivals, horizon_s);
        sim.window_s = self.sim.window_s;
        sim.per_hop_overhead_ms = self.sim.per_hop_overhead_ms;
        let mut loop_cfg = LoopConfig::new(self.sla);
        loop_cfg.filter = params.filter();
        loop_cfg.refresh = refresh;
        loop_cfg.reschedule_on_refresh = self.reschedule_on_refresh;
        Ok(Scenario {
            spec: self.clone(),
            ips,
            sim,
            loop_cfg,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
