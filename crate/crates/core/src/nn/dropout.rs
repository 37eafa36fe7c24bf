use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{Ctx, Layer, Mode, Tensor};
use crate::error::{Error, Result};
use crate::math::Real;

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in training.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl<T: Real> Layer<T> for Dropout<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        if ctx.mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = T::from_f64(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if ctx.rng.gen::<f64>() < self.rate { T::ZERO } else { keep })
            .collect();
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        if let Some(mask) = &self.mask {
            g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
        }
        g
    }
}
