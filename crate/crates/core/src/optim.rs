//! Adam optimizer over flat parameter slices.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr: F::of(lr),
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let one = F::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + self.eps);
        }
    }
}
