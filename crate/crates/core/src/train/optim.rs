//! Bias-corrected Adam over a named parameter map.

use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Gradients, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: IndexMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: IndexMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment of `name`, once it has received a gradient.
    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Applies one update to every parameter that has a gradient. Nothing is
    /// modified when any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut IndexMap<String, Arc<Tensor<T>>>, grads: &Gradients<T>) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.get(name).ok_or_else(|| Error::Training(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return shape_err(format!("gradient for {name} is {:?}, parameter is {:?}", g.shape(), p.shape()));
            }
            if !g.all_finite() {
                return Err(Error::Training(format!("non-finite gradient for parameter {name}")));
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (name, g) in grads.iter() {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (g.zeros_like(), g.zeros_like()));
            let p = Arc::make_mut(params.get_mut(name).expect("checked above"));
            for (((pi, mi), vi), &gi) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
