use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::template::{builtin_mix_alias, CallGraphTemplate};
use crate::error::{Error, Result};
use crate::net::seeded_rng;

const MIX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalLaw {
    /// Exactly `1/qps` apart.
    #[default]
    Deterministic,
    /// Exponential inter-arrival times with rate `qps`.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadPhase {
    pub duration_s: f64,
    pub qps: f64,
    /// Request type (or mix alias) -> proportion.
    pub mix: BTreeMap<String, f64>,
}

impl WorkloadPhase {
    pub fn new(duration_s: f64, qps: f64, mix: &[(&str, f64)]) -> Self {
        WorkloadPhase {
            duration_s,
            qps,
            mix: mix.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// Mix with aliases expanded into their member types.
    pub fn resolved_mix(&self) -> Result<BTreeMap<String, f64>> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for (name, w) in &self.mix {
            if !(0.0..=1.0).contains(w) {
                return Err(Error::validation(format!(
                    "mix weight for `{name}` is {w}, expected [0,1]"
                )));
            }
            match builtin_mix_alias(name) {
                Some(members) => {
                    for (m, mw) in members {
                        *out.entry(m.to_string()).or_default() += w * mw;
                    }
                }
                None => *out.entry(name.clone()).or_default() += w,
            }
        }
        let total: f64 = out.values().sum();
        if (total - 1.0).abs() > MIX_TOLERANCE {
            return Err(Error::validation(format!("mix weights sum to {total}, expected 1")));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::validation(format!(
                "phase duration must be > 0, got {}",
                self.duration_s
            )));
        }
        if !(self.qps >= 0.0 && self.qps.is_finite()) {
            return Err(Error::validation(format!("phase qps must be >= 0, got {}", self.qps)));
        }
        self.resolved_mix().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEvent {
    /// Seconds from the start of the run.
    pub arrival_time: f64,
    #[serde(rename = "type")]
    pub request_type: String,
    pub id: u64,
}

/// Phased open-loop workload description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub phases: Vec<WorkloadPhase>,
    #[serde(default)]
    pub arrival_law: ArrivalLaw,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    pub fn generate(&self) -> Result<Vec<RequestEvent>> {
        generate_arrivals(&self.phases, self.arrival_law, self.seed)
    }

    /// Every request type any phase can emit.
    pub fn request_types(&self) -> Result<Vec<String>> {
        let mut names = std::collections::BTreeSet::new();
        for p in &self.phases {
            for (k, w) in p.resolved_mix()? {
                if w > 0.0 {
                    names.insert(k);
                }
            }
        }
        Ok(names.into_iter().collect())
    }

    /// Fails naming the first request type with no template.
    pub fn check_templates(&self, templates: &BTreeMap<String, CallGraphTemplate>) -> Result<()> {
        for t in self.request_types()? {
            if !templates.contains_key(&t) {
                return Err(Error::unknown("template", t));
            }
        }
        Ok(())
    }
}

fn pick(mix: &[(String, f64)], u: f64) -> &str {
    let mut acc = 0.0;
    for (name, w) in mix {
        acc += w;
        if u < acc {
            return name;
        }
    }
    // rounding leaves u >= acc only for the last positive-weight entry
    &mix.iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .unwrap_or(&mix[mix.len() - 1])
        .0
}

/// Open-loop arrivals across `phases`, in order. Phase `k` covers
/// `[sum(d_0..d_k), sum(d_0..=d_k))`; no event crosses a boundary.
pub fn generate_arrivals(phases: &[WorkloadPhase], law: ArrivalLaw, seed: u64) -> Result<Vec<RequestEvent>> {
    if phases.is_empty() {
        return Err(Error::validation("workload has no phases"));
    }
    let mut rng = seeded_rng(seed);
    let mut events = Vec::new();
    let mut start = 0.0;
    for (pi, phase) in phases.iter().enumerate() {
        phase
            .validate()
            .map_err(|e| Error::validation(format!("phases[{pi}]: {e}")))?;
        let mix: Vec<(String, f64)> = phase.resolved_mix()?.into_iter().collect();
        let end = start + phase.duration_s;
        if phase.qps > 0.0 {
            match law {
                ArrivalLaw::Deterministic => {
                    let count = (phase.qps * phase.duration_s + 1e-9).floor() as u64;
                    for k in 0..count {
                        let t = start + k as f64 / phase.qps;
                        let ty = pick(&mix, rng.gen::<f64>());
                        events.push(RequestEvent {
                            arrival_time: t,
                            request_type: ty.to_string(),
                            id: events.len() as u64,
                        });
                    }
                }
                ArrivalLaw::Poisson => {
                    let mut t = start;
                    loop {
                        let u: f64 = rng.gen();
                        t += -(1.0 - u).ln() / phase.qps;
                        if t >= end {
                            break;
                        }
                        let ty = pick(&mix, rng.gen::<f64>());
                        events.push(RequestEvent {
                            arrival_time: t,
                            request_type: ty.to_string(),
                            id: events.len() as u64,
                        });
                    }
                }
            }
        }
        start = end;
    }
    Ok(events)
}

/// `id,type,arrival_s`
pub fn write_arrivals_csv<W: Write>(w: W, events: &[RequestEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["id", "type", "arrival_s"])?;
    for e in events {
        w.write_record([
            e.id.to_string(),
            e.request_type.clone(),
            format!("{:.9}", e.arrival_time),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_single_phase() {
        let ev = generate_arrivals(
            &[WorkloadPhase::new(10.0, 30.0, &[("a", 1.0)])],
            ArrivalLaw::Deterministic,
            1,
        )
        .unwrap();
        assert_eq!(ev.len(), 300);
        for w in ev.windows(2) {
            assert!((w[1].arrival_time - w[0].arrival_time - 1.0 / 30.0).abs() < 1e-12);
            assert_eq!(w[1].id, w[0].id + 1);
        }
    }

    #[test]
    fn block_shape_count() {
        let phases: Vec<_> = [(30.0, "g1"), (10.0, "g2"), (50.0, "g3"), (70.0, "g4")]
            .iter()
            .map(|(q, g)| WorkloadPhase::new(8.0, *q, &[(*g, 1.0)]))
            .collect();
        let ev = generate_arrivals(&phases, ArrivalLaw::Deterministic, 0).unwrap();
        assert_eq!(ev.len(), 240 + 80 + 400 + 560);
        assert!(ev[..240].iter().all(|e| e.request_type == "g1" && e.arrival_time < 8.0));
        assert_eq!(ev[240].arrival_time, 8.0);
    }

    #[test]
    fn zero_qps_phase_is_silent() {
        let phases = [
            WorkloadPhase::new(5.0, 0.0, &[("a", 1.0)]),
            WorkloadPhase::new(1.0, 2.0, &[("a", 1.0)]),
        ];
        let ev = generate_arrivals(&phases, ArrivalLaw::Poisson, 3).unwrap();
        assert!(ev.iter().all(|e| e.arrival_time >= 5.0 && e.arrival_time < 6.0));
    }

    #[test]
    fn poisson_respects_boundaries_and_seed() {
        let phases = [
            WorkloadPhase::new(2.0, 100.0, &[("a", 1.0)]),
            WorkloadPhase::new(2.0, 10.0, &[("b", 1.0)]),
        ];
        let a = generate_arrivals(&phases, ArrivalLaw::Poisson, 9).unwrap();
        assert_eq!(a, generate_arrivals(&phases, ArrivalLaw::Poisson, 9).unwrap());
        assert_ne!(a, generate_arrivals(&phases, ArrivalLaw::Poisson, 10).unwrap());
        for e in &a {
            let first = e.arrival_time < 2.0;
            assert_eq!(e.request_type, if first { "a" } else { "b" });
        }
        assert!(a.windows(2).all(|w| w[0].arrival_time <= w[1].arrival_time));
    }

    #[test]
    fn mix_validation_and_alias() {
        assert!(WorkloadPhase::new(1.0, 1.0, &[("a", 0.5), ("b", 0.4)])
            .validate()
            .is_err());
        assert!(WorkloadPhase::new(1.0, 1.0, &[("a", 1.5)]).validate().is_err());
        assert!(WorkloadPhase::new(0.0, 1.0, &[("a", 1.0)]).validate().is_err());
        assert!(generate_arrivals(&[], ArrivalLaw::Deterministic, 0).is_err());
        let mix = WorkloadPhase::new(1.0, 1.0, &[("mixed", 1.0)]).resolved_mix().unwrap();
        assert_eq!(mix.len(), 3);
        assert!((mix.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn missing_template_is_named() {
        let spec = WorkloadSpec {
            phases: vec![WorkloadPhase::new(1.0, 1.0, &[("nope", 1.0)])],
            arrival_law: ArrivalLaw::Deterministic,
            seed: 0,
        };
        let err = spec.check_templates(&super::super::builtin_templates()).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn spec_json_shape() {
        let text = r#"{"phases":[{"duration_s":8,"qps":30,"mix":{"compose-post":1.0}}],"arrival_law":"deterministic","seed":7}"#;
        let spec: WorkloadSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.generate().unwrap().len(), 240);
    }

    #[test]
    fn arrivals_csv_header() {
        let ev = generate_arrivals(
            &[WorkloadPhase::new(1.0, 2.0, &[("a", 1.0)])],
            ArrivalLaw::Deterministic,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_arrivals_csv(&mut buf, &ev).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("id,type,arrival_s"));
        assert_eq!(text.lines().count(), 3);
    }
}
