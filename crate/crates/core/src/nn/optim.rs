//! Adam and momentum-averaged parameter copies.

/// Adam with bias correction. One instance per flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One update in place. Zero gradients leave parameters exactly
    /// unchanged (the moment estimates stay zero, so the step is 0/ε·lr = 0).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "Adam: parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "Adam: gradient count mismatch");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Exponential moving average of a source parameter vector:
/// shadow ← m·shadow + (1−m)·source. The shadow is read-only for training —
/// it is never updated by gradients, only by this rule.
pub fn momentum_update(shadow: &mut [f64], source: &[f64], m: f64) {
    assert_eq!(shadow.len(), source.len(), "momentum_update: length mismatch");
    for (s, &p) in shadow.iter_mut().zip(source) {
        *s = m * *s + (1.0 - m) * p;
    }
}
