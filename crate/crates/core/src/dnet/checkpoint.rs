//! JSON checkpoints: weights, masks, nonlinearity constants, batch-norm
//! statistics, seeds and, once calibrated, the inference bridge.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bridge::InferenceBridge;
use super::Network;
use crate::error::{Error, Result};

const FORMAT: &str = "dendrofet-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub network: Network<f32>,
    #[serde(default)]
    pub bridge: Option<InferenceBridge>,
}

impl Checkpoint {
    pub fn new(network: Network<f32>, bridge: Option<InferenceBridge>) -> Self {
        Self { format: FORMAT.into(), network, bridge }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        ck.network.config.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnet::NetworkConfig;
    use ndarray::Array2;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig { input: 6, hidden: vec![4, 3], branches: vec![2, 3], classes: 2, ..Default::default() };
        let net = Network::<f32>::new(cfg).unwrap();
        let back = Checkpoint::from_json(&Checkpoint::new(net.clone(), None).to_json().unwrap()).unwrap();
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 11.0);
        let a = net.logits(x.view()).unwrap();
        let b = back.network.logits(x.view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn rejects_unknown_format() {
        let cfg = NetworkConfig { input: 3, hidden: vec![2], branches: vec![1], classes: 2, ..Default::default() };
        let mut ck = Checkpoint::new(Network::<f32>::new(cfg).unwrap(), None);
        ck.format = "other".into();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}
