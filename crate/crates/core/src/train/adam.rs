//! Adam with bias correction. Moments are kept in f64 regardless of the
//! parameter precision so a checkpointed run resumes bit-exactly.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    /// One moment buffer per parameter slice.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// One update. An all-zero gradient leaves parameters and state untouched;
    /// a non-finite gradient is rejected before anything is modified.
    pub fn step<T: Real>(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {i}: optimizer size {}, param {}, grad {}",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient tensor {i} element {j}")));
            }
        }
        if grads.iter().all(|g| g.iter().all(|&v| v == T::zero())) {
            return Ok(());
        }

        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.t.min(i32::MAX as u64) as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j].to_f64();
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] = T::of(p[j].to_f64() - lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}
