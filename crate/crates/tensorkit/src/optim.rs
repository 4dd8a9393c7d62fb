use crate::float::{lit, Float};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are keyed by slot index and
/// allocated on first use.
pub struct Adam<F> {
    config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advance the step counter; call once before updating the slots of a step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut [F], grad: &[F], lr: F) {
        assert_eq!(param.len(), grad.len(), "adam slot {slot}: grad length");
        assert!(self.step > 0, "begin_step must precede update");
        if self.moments.len() <= slot {
            self.moments.resize_with(slot + 1, || None);
        }
        let (m, v) = self.moments[slot].get_or_insert_with(|| (vec![F::zero(); param.len()], vec![F::zero(); param.len()]));
        let b1: F = lit(self.config.beta1);
        let b2: F = lit(self.config.beta2);
        let eps: F = lit(self.config.eps);
        let t = self.step as i32;
        let c1 = F::one() - b1.powi(t);
        let c2 = F::one() - b2.powi(t);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (F::one() - b1) * g;
            v[i] = b2 * v[i] + (F::one() - b2) * g * g;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            param[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Linearly decaying learning rate without warm-up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearDecay {
    pub initial: f64,
    pub total_steps: u64,
}

impl LinearDecay {
    pub fn at(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.initial;
        }
        let frac = 1.0 - (step.min(self.total_steps) as f64) / (self.total_steps as f64);
        self.initial * frac
    }
}
