//! Multi-gate ferroelectric FET modelled as a dendritic neuron.
//!
//! The crate is layered bottom-up:
//!
//! * [`ferrodomain`] - stochastic multi-domain ferroelectric capacitor with
//!   nucleation-limited switching under time-varying fields.
//! * [`fet`] - the underlying transistor (drain current and the
//!   regime-dependent MOS capacitance).
//! * [`device`] - N ferroelectric gates sharing a floating gate over one FET,
//!   the self-consistent charge-balance solver and the pulse protocols.
//! * [`dnet`] - dendritic deep networks with masked branch connectivity,
//!   training, and device-in-the-loop inference.
//! * [`idx`] - IDX dataset files.

pub mod device;
pub mod dnet;
pub mod error;
pub mod ferrodomain;
pub mod fet;
pub mod idx;
pub mod rng;
pub mod units;

pub use error::{Error, Result};
