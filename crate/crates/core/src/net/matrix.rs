//! Cross-node delay and bandwidth matrices.
//!
//! Delays follow the distance/congestion law: for `i != j`
//!
//! ```text
//! delay[i][j] = floor((bl + U(0, mal) * |i - j| / n) * U(0.5, 1.5))
//! ```
//!
//! with the two uniforms drawn in that order for every ordered pair,
//! row-major. Bandwidths are drawn uniformly from a configured range and
//! rounded to whole Mbit/s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayParams {
    /// Base latency, ms.
    pub bl: f64,
    /// Maximum additional latency, ms.
    pub mal: f64,
}

impl DelayParams {
    /// Closed-form bounds `(lo, hi)` of any off-diagonal entry for an
    /// `n`-node cluster.
    pub fn bounds(&self, n: usize) -> (u64, u64) {
        let n = n.max(1) as f64;
        let lo = (0.5 * self.bl).floor() as u64;
        let hi = (1.5 * (self.bl + self.mal * (n - 1.0) / n)).floor() as u64;
        (lo, hi)
    }
}

/// N x N one-way delays in whole milliseconds. `values[i][j]` is the delay
/// applied to traffic leaving node `i` towards node `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMatrix {
    pub n: usize,
    pub unit: String,
    pub values: Vec<Vec<u64>>,
    pub seed: u64,
    pub params: DelayParams,
}

impl DelayMatrix {
    /// Wraps hand-written values. Diagonal must be zero.
    pub fn from_values(values: Vec<Vec<u64>>) -> Result<Self> {
        let m = DelayMatrix {
            n: values.len(),
            unit: "ms".into(),
            values,
            seed: 0,
            params: DelayParams::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(n: usize) -> Self {
        DelayMatrix {
            n,
            unit: "ms".into(),
            values: vec![vec![0; n]; n],
            seed: 0,
            params: DelayParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.n {
            return Err(Error::Shape(format!(
                "delay matrix declares n={} but has {} rows",
                self.n,
                self.values.len()
            )));
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.n {
                return Err(Error::Shape(format!(
                    "delay matrix row {i} has {} entries, expected {}",
                    row.len(),
                    self.n
                )));
            }
            if row[i] != 0 {
                return Err(Error::validation(format!(
                    "delay matrix diagonal entry ({i},{i}) is {}, expected 0",
                    row[i]
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.values[from][to]
    }

    /// Round-trip delay `d(a,b) + d(b,a)`; zero when `a == b`.
    #[inline]
    pub fn round_trip(&self, a: usize, b: usize) -> u64 {
        self.values[a][b] + self.values[b][a]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DelayMatrix = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn generate_delay_matrix(n: usize, bl: f64, mal: f64, seed: u64) -> Result<DelayMatrix> {
    if n == 0 {
        return Err(Error::EmptyCluster);
    }
    if !(bl >= 0.0 && bl.is_finite()) {
        return Err(Error::validation(format!("base latency must be >= 0, got {bl}")));
    }
    if !(mal >= 0.0 && mal.is_finite()) {
        return Err(Error::validation(format!(
            "max additional latency must be >= 0, got {mal}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let nf = n as f64;
    let mut values = vec![vec![0u64; n]; n];
    for (i, row) in values.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let additional = rng.gen::<f64>() * mal;
            let distance = i.abs_diff(j) as f64 / nf;
            let emulated = bl + additional * distance;
            let congestion = 0.5 + rng.gen::<f64>();
            *cell = (emulated * congestion).floor() as u64;
        }
    }
    Ok(DelayMatrix {
        n,
        unit: "ms".into(),
        values,
        seed,
        params: DelayParams { bl, mal },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandwidthParams {
    pub min_bw: f64,
    pub max_bw: f64,
}

/// N x N directed bandwidth caps in Mbit/s. The diagonal is `None`; an
/// off-diagonal `None` means the pair is unshaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthMatrix {
    pub n: usize,
    pub unit: String,
    pub values: Vec<Vec<Option<f64>>>,
    pub seed: u64,
    pub params: BandwidthParams,
}

impl BandwidthMatrix {
    pub fn from_values(values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let m = BandwidthMatrix {
            n: values.len(),
            unit: "mbit/s".into(),
            values,
            seed: 0,
            params: BandwidthParams::default(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Every pair unshaped.
    pub fn unlimited(n: usize) -> Self {
        BandwidthMatrix {
            n,
            unit: "mbit/s".into(),
            values: vec![vec![None; n]; n],
            seed: 0,
            params: BandwidthParams::default(),
        }
    }

    pub fn uniform(n: usize, mbit: f64) -> Self {
        let values = (0..n)
            .map(|i| (0..n).map(|j| (i != j).then_some(mbit)).collect())
            .collect();
        BandwidthMatrix {
            n,
            unit: "mbit/s".into(),
            values,
            seed: 0,
            params: BandwidthParams {
                min_bw: mbit,
                max_bw: mbit,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.n {
            return Err(Error::Shape(format!(
                "bandwidth matrix declares n={} but has {} rows",
                self.n,
                self.values.len()
            )));
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.n {
                return Err(Error::Shape(format!(
                    "bandwidth matrix row {i} has {} entries, expected {}",
                    row.len(),
                    self.n
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    if i != j && !(*v > 0.0 && v.is_finite()) {
                        return Err(Error::validation(format!("bandwidth ({i},{j}) must be > 0, got {v}")));
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        if from == to {
            None
        } else {
            self.values[from][to]
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: BandwidthMatrix = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

pub fn generate_bandwidth_matrix(n: usize, min_bw: f64, max_bw: f64, seed: u64) -> Result<BandwidthMatrix> {
    if n == 0 {
        return Err(Error::EmptyCluster);
    }
    if !(min_bw > 0.0 && min_bw.is_finite()) {
        return Err(Error::validation(format!("min_bw must be > 0, got {min_bw}")));
    }
    if !(max_bw >= min_bw && max_bw.is_finite()) {
        return Err(Error::validation(format!(
            "max_bw must be >= min_bw ({min_bw}), got {max_bw}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let span = max_bw - min_bw;
    let mut values = vec![vec![None; n]; n];
    for (i, row) in values.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            let raw = min_bw + rng.gen::<f64>() * span;
            *cell = Some(raw.round().clamp(min_bw, max_bw));
        }
    }
    Ok(BandwidthMatrix {
        n,
        unit: "mbit/s".into(),
        values,
        seed,
        params: BandwidthParams { min_bw, max_bw },
    })
}
