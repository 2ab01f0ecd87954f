//! Dendritic networks: masked branch connectivity, abstract training and
//! device-in-the-loop inference.

mod adam;
pub mod bridge;
pub mod checkpoint;
pub mod circles;
mod layer;
mod masks;
mod network;
mod real;
mod train;

pub use adam::Adam;
pub use layer::{DendriticLayer, Dense, LayerGrads, Mode};
pub use masks::{build_masks, BranchMasks};
pub use network::{softmax_cross_entropy, Network, NetworkConfig};
pub use real::Real;
pub use train::{evaluate, learning_rate, train, Dataset, EpochMetrics, TrainOutcome};

use serde::{Deserialize, Serialize};

/// `g(v) = p * tanh(q * v)` for `v >= 0`, zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchNonlinearity {
    pub p: f64,
    pub q: f64,
}

impl Default for BranchNonlinearity {
    fn default() -> Self {
        Self { p: 2.2, q: 1.0 / 3.0 }
    }
}

impl BranchNonlinearity {
    pub fn eval<T: Real>(&self, v: T) -> T {
        if v > T::zero() {
            T::c(self.p) * (T::c(self.q) * v).tanh()
        } else {
            T::zero()
        }
    }

    /// Derivative; zero for `v <= 0`.
    pub fn derivative<T: Real>(&self, v: T) -> T {
        if v > T::zero() {
            let t = (T::c(self.q) * v).tanh();
            T::c(self.p * self.q) * (T::one() - t * t)
        } else {
            T::zero()
        }
    }
}

/// Where the branch nonlinearity sits relative to the somatic sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchReading {
    /// `ReLU(sum_l g(branch_l))`.
    #[default]
    PerBranch,
    /// `ReLU(g(sum_l branch_l))`.
    Total,
}
