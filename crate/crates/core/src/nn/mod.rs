//! Dense tensors and the layers, losses and optimizer the SED networks use.
//!
//! Every layer caches what its backward pass needs during `forward`, and
//! `backward` takes the gradient of the loss with respect to the layer
//! output, accumulates parameter gradients and returns the gradient with
//! respect to the layer input. Sequences may carry per-item valid lengths;
//! layers that mix information across frames ignore frames past the length.

mod activation;
mod adam;
mod batch_norm;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod gru;
mod init;
mod loss;
mod pool;
mod tensor;

use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::Real;

pub use activation::{softmax_rows, Activation, ActivationLayer};
pub use adam::{clip_grad_norm, Adam, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use batch_norm::{BatchNorm, BN_EPS, BN_MOMENTUM};
pub use conv::{Conv2d, Conv3d};
pub use dense::Dense;
pub use dropout::Dropout;
pub use gru::{BiGru, Gru};
pub use init::glorot_uniform;
pub use loss::{
    bce_logit_grad, bce_prob_grad, cce_logit_grad, loss_bce, loss_cce, BCE_CLAMP, CCE_CLAMP,
};
pub use pool::MaxPoolFreq;
pub use tensor::{Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call state shared by every layer of one forward pass.
pub struct Ctx<'a> {
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
    /// Valid frames per batch item (frames are axis 1); `None` means all.
    pub lengths: Option<&'a [usize]>,
}

impl Ctx<'_> {
    /// Valid frame count of batch item `b` given the padded length.
    #[inline]
    pub fn valid(&self, b: usize, padded: usize) -> usize {
        self.lengths.map_or(padded, |l| l[b].min(padded))
    }
}

pub trait Layer<T: Real> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>>;

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T>;

    /// Trainable parameters with names local to the layer.
    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        Vec::new()
    }
}
