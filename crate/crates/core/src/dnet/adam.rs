use super::Real;

/// Adam with bias correction. State is allocated lazily per parameter slot,
/// in visiting order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: Vec::new() }
    }
}

impl<T: Real> Adam<T> {
    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Starts a new optimizer step; call once before visiting parameters.
    pub fn begin_step(&mut self) -> AdamStep<'_, T> {
        self.step += 1;
        let lr_correction = (1.0 - self.beta2.powi(self.step)).sqrt() / (1.0 - self.beta1.powi(self.step));
        AdamStep { adam: self, slot: 0, lr_correction }
    }
}

pub struct AdamStep<'a, T> {
    adam: &'a mut Adam<T>,
    slot: usize,
    lr_correction: f64,
}

impl<T: Real> AdamStep<'_, T> {
    pub fn update(&mut self, lr: f64, params: &mut [T], grads: &[T]) {
        if self.slot == self.adam.moments.len() {
            self.adam.moments.push((vec![T::zero(); params.len()], vec![T::zero(); params.len()]));
        }
        let (m, v) = &mut self.adam.moments[self.slot];
        assert_eq!(m.len(), params.len(), "parameter slot changed size");
        self.slot += 1;
        let (b1, b2) = (T::c(self.adam.beta1), T::c(self.adam.beta2));
        let (one, step) = (T::one(), T::c(lr * self.lr_correction));
        // eps is applied to the bias-corrected second moment.
        let eps = T::c(self.adam.eps * (1.0 - self.adam.beta2.powi(self.adam.step)).sqrt());
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p = *p - step * *m / (v.sqrt() + eps);
        }
    }
}
