//! Per-feature min-max scaling to [−1, +1].

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mesh::{Voltages, N_MZI};

/// Per-feature ranges. Constant features map to 0 and back to the constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Result<Self> {
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        let mut n = 0usize;
        for row in rows {
            ensure!(row.len() == width, "row of width {} where {} expected", row.len(), width);
            for (j, &x) in row.iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
            n += 1;
        }
        ensure!(n > 0, "cannot fit a normalization to zero rows");
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// dB (or feature units) per normalized unit.
    pub fn half_range(&self, j: usize) -> f64 {
        0.5 * (self.max[j] - self.min[j])
    }

    pub fn normalize(&self, j: usize, x: f64) -> f64 {
        let h = self.half_range(j);
        if h > 0.0 {
            (x - self.min[j]) / h - 1.0
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, j: usize, z: f64) -> f64 {
        let h = self.half_range(j);
        if h > 0.0 {
            (z + 1.0) * h + self.min[j]
        } else {
            self.min[j]
        }
    }
}

/// Input and output scaling of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub inputs: MinMax,
    pub outputs: MinMax,
}

/// Network input features `u = [v, v²]`.
pub fn voltage_features(v: &Voltages) -> [f64; 2 * N_MZI] {
    std::array::from_fn(|i| if i < N_MZI { v[i] } else { v[i - N_MZI] * v[i - N_MZI] })
}
