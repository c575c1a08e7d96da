//! Adaptive-moment optimizer with bias correction.

use super::net::ParamGroup;
use super::Scalar;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![T::ZERO; n_params],
            v: vec![T::ZERO; n_params],
            step: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    ///
    /// `groups` is only consulted to name the offending tensor when a
    /// non-finite gradient shows up.
    pub fn apply(
        &mut self,
        params: &mut [T],
        grads: &[T],
        lr: T,
        groups: &[ParamGroup],
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            let name = groups
                .iter()
                .find(|g| bad >= g.offset && bad < g.offset + g.len)
                .map(|g| g.name.as_str())
                .unwrap_or("<unknown>");
            return Err(Error::Training(format!(
                "non-finite gradient in parameter {name}"
            )));
        }

        self.step += 1;
        let b1 = T::from_f64(BETA1);
        let b2 = T::from_f64(BETA2);
        let eps = T::from_f64(EPSILON);
        let one = T::ONE;
        // bias corrections for the current step
        let c1 = one / (one - b1.powi(self.step as i32));
        let c2 = one / (one - b2.powi(self.step as i32));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] * c1;
            let v_hat = self.v[i] * c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
