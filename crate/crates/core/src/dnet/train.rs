use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{argmax_rows, softmax_cross_entropy, Network, NetworkConfig};
use super::Adam;
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_path, seeded};

pub type Dataset = crate::idx::ImageSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions seen during the epoch.
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn final_test_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.test_acc)
    }
}

/// Geometric decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn learning_rate(config: &NetworkConfig, epoch: usize) -> f64 {
    if config.epochs <= 1 {
        return config.lr_start;
    }
    let frac = epoch as f64 / (config.epochs - 1) as f64;
    config.lr_start * (config.lr_end / config.lr_start).powf(frac)
}

pub(crate) fn batch_matrix(data: &Dataset, indices: &[usize]) -> Array2<f32> {
    let mut buf = Vec::with_capacity(indices.len() * data.features);
    for &i in indices {
        buf.extend_from_slice(data.image(i));
    }
    Array2::from_shape_vec((indices.len(), data.features), buf).expect("batch shape")
}

/// Inference accuracy over `data`.
pub fn evaluate(network: &Network<f32>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return invalid("empty evaluation set");
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(1000) {
        let preds = network.predict(batch_matrix(data, chunk).view())?;
        correct += preds.iter().zip(chunk).filter(|(&p, &i)| p == data.labels[i] as usize).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Minibatch Adam training with per-epoch evaluation on `test`. `observe`
/// sees every epoch's metrics as they are produced.
pub fn train(
    config: &NetworkConfig,
    train_set: &Dataset,
    test: &Dataset,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.features != config.input || test.features != config.input {
        return invalid(format!("dataset has {} features, network expects {}", train_set.features, config.input));
    }
    if let Some(&bad) = train_set.labels.iter().chain(&test.labels).find(|&&l| l as usize >= config.classes) {
        return invalid(format!("label {bad} out of range for {} classes", config.classes));
    }
    let mut network = Network::<f32>::new(config.clone())?;
    let mut adam = Adam::<f32>::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = learning_rate(config, epoch);
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_path(config.seed, &[1, epoch as u64])));
        let mut dropout_rng = seeded(derive_path(config.seed, &[2, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let x = batch_matrix(train_set, batch);
            let labels: Vec<u8> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let logits = network.forward_train(x.view(), &mut dropout_rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&labels).filter(|(&p, &l)| p == l as usize).count();
            network.backward(grad.view())?;
            let mut step = adam.begin_step();
            network.for_each_param(&mut |p, g| step.update(lr, p, g))?;
        }
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc: evaluate(&network, test)?,
        };
        observe(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome { network, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = NetworkConfig::default();
        assert!((learning_rate(&cfg, 0) - 1e-2).abs() < 1e-15);
        assert!((learning_rate(&cfg, 99) - 1e-5).abs() < 1e-15);
        assert!((learning_rate(&cfg, 33) - 1e-2 * 1e-3f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }
}
