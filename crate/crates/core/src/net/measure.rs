//! Simulated measurer: measured value = injected value + noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::matrix::seeded_rng;
use crate::net::{BandwidthMatrix, DelayMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    Delay,
    Bandwidth,
}

/// `measured = injected * (1 + U(-relative, relative)) + U(0, additive_max)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub additive_max: f64,
    pub relative: f64,
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams {
        additive_max: 0.0,
        relative: 0.0,
    };

    /// Up to 1 ms of extra latency, never less than injected.
    pub fn default_delay() -> Self {
        NoiseParams {
            additive_max: 1.0,
            relative: 0.0,
        }
    }

    /// +/-5 % multiplicative.
    pub fn default_bandwidth() -> Self {
        NoiseParams {
            additive_max: 0.0,
            relative: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.additive_max >= 0.0 && self.relative >= 0.0) {
            return Err(Error::validation(format!("noise parameters must be >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Off-diagonal-only square matrix; `None` cells are skipped.
pub type SparseMatrix = Vec<Vec<Option<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub kind: MeasurementKind,
    pub injected: SparseMatrix,
    pub measured: SparseMatrix,
    pub mae: f64,
    pub max_abs_err: f64,
}

impl MeasurementReport {
    /// Builds a report from paired matrices, comparing every cell present
    /// in both.
    pub fn compare(kind: MeasurementKind, injected: SparseMatrix, measured: SparseMatrix) -> Result<Self> {
        if injected.len() != measured.len() || injected.iter().zip(&measured).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape("injected and measured matrices differ in shape".into()));
        }
        let mut sum = 0.0;
        let mut max = 0.0f64;
        let mut count = 0usize;
        for (i, (ri, rm)) in injected.iter().zip(&measured).enumerate() {
            for (j, (a, b)) in ri.iter().zip(rm).enumerate() {
                if i == j {
                    continue;
                }
                if let (Some(a), Some(b)) = (a, b) {
                    let e = (a - b).abs();
                    sum += e;
                    max = max.max(e);
                    count += 1;
                }
            }
        }
        let mae = if count == 0 { 0.0 } else { sum / count as f64 };
        Ok(MeasurementReport {
            kind,
            injected,
            measured,
            mae,
            max_abs_err: max,
        })
    }
}

fn delay_cells(m: &DelayMatrix) -> SparseMatrix {
    (0..m.n)
        .map(|i| (0..m.n).map(|j| (i != j).then(|| m.get(i, j) as f64)).collect())
        .collect()
}

fn perturb(cells: &SparseMatrix, noise: NoiseParams, seed: u64) -> SparseMatrix {
    let mut rng = seeded_rng(seed);
    cells
        .iter()
        .map(|row| {
            row.iter()
                .map(|cell| {
                    cell.map(|v| {
                        // Two draws per cell keep the stream aligned regardless of params.
                        let rel = (rng.gen::<f64>() * 2.0 - 1.0) * noise.relative;
                        let add = rng.gen::<f64>() * noise.additive_max;
                        v * (1.0 + rel) + add
                    })
                })
                .collect()
        })
        .collect()
}

pub fn simulate_delay_measurement(injected: &DelayMatrix, noise: NoiseParams, seed: u64) -> Result<MeasurementReport> {
    noise.validate()?;
    let cells = delay_cells(injected);
    let measured = perturb(&cells, noise, seed);
    MeasurementReport::compare(MeasurementKind::Delay, cells, measured)
}

pub fn simulate_bandwidth_measurement(
    injected: &BandwidthMatrix,
    noise: NoiseParams,
    seed: u64,
) -> Result<MeasurementReport> {
    noise.validate()?;
    let cells: SparseMatrix = (0..injected.n)
        .map(|i| (0..injected.n).map(|j| injected.get(i, j)).collect())
        .collect();
    let measured = perturb(&cells, noise, seed);
    MeasurementReport::compare(MeasurementKind::Bandwidth, cells, measured)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{generate_bandwidth_matrix, generate_delay_matrix};

    #[test]
    fn zero_noise_is_exact() {
        let m = generate_delay_matrix(9, 3.0, 40.0, 1).unwrap();
        let r = simulate_delay_measurement(&m, NoiseParams::NONE, 5).unwrap();
        assert_eq!(r.injected, r.measured);
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.max_abs_err, 0.0);
    }

    #[test]
    fn default_delay_noise_within_one_ms() {
        for seed in 0..50 {
            let m = generate_delay_matrix(9, 3.0, 40.0, seed).unwrap();
            let r = simulate_delay_measurement(&m, NoiseParams::default_delay(), seed).unwrap();
            assert!(r.mae <= 1.0 && r.mae <= r.max_abs_err && r.max_abs_err <= 1.0);
            for (ri, rm) in r.injected.iter().zip(&r.measured) {
                for (a, b) in ri.iter().zip(rm) {
                    if let (Some(a), Some(b)) = (a, b) {
                        assert!(b >= a);
                    }
                }
            }
        }
    }

    #[test]
    fn bandwidth_noise_is_relative() {
        let m = generate_bandwidth_matrix(5, 200.0, 800.0, 3).unwrap();
        let r = simulate_bandwidth_measurement(&m, NoiseParams::default_bandwidth(), 9).unwrap();
        for (ri, rm) in r.injected.iter().zip(&r.measured) {
            for (a, b) in ri.iter().zip(rm) {
                if let (Some(a), Some(b)) = (a, b) {
                    assert!((b - a).abs() <= 0.05 * a + 1e-9);
                }
            }
        }
        assert!(r.injected[0][0].is_none());
    }

    #[test]
    fn negative_noise_rejected() {
        let m = DelayMatrix::zeros(2);
        let bad = NoiseParams {
            additive_max: -1.0,
            relative: 0.0,
        };
        assert!(simulate_delay_measurement(&m, bad, 0).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = vec![vec![None, Some(1.0)], vec![Some(1.0), None]];
        let b = vec![vec![None, Some(1.0)]];
        assert!(MeasurementReport::compare(MeasurementKind::Delay, a, b).is_err());
    }
}
