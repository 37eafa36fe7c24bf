use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::math::{self, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment accumulators, flattened per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Bias-corrected Adam over an ordered parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            state: AdamState {
                step: 0,
                lr,
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                eps: ADAM_EPS,
                m: Vec::new(),
                v: Vec::new(),
            },
        }
    }

    pub fn from_state(state: AdamState) -> Self {
        Self { state }
    }

    /// Applies one update using each parameter's accumulated gradient.
    /// Moments are created lazily on the first call.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        let st = &mut self.state;
        if st.m.is_empty() {
            st.m = params.iter().map(|p| alloc::vec![0.0; p.len()]).collect();
            st.v = st.m.clone();
        }
        if st.m.len() != params.len() || st.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Shape(format!(
                "optimizer state for {} tensors does not match {} parameters",
                st.m.len(),
                params.len()
            )));
        }
        st.step += 1;
        let t = st.step as f64;
        let c1 = 1.0 - math::pow(st.beta1, t);
        let c2 = 1.0 - math::pow(st.beta2, t);
        for ((p, m), v) in params.iter_mut().zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
            let grads = p.grad.data().to_vec();
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(grads).enumerate() {
                let g = g.to_f64();
                m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
                v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= T::from_f64(st.lr * mh / (math::sqrt(vh) + st.eps));
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(params: &mut [&mut Param<T>], max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| {
            let g = g.to_f64();
            g * g
        })
        .sum();
    let norm = math::sqrt(sq);
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}
