use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Ctx, Layer, Mode, Param, Tensor};
use crate::error::{Error, Result};
use crate::math::Real;

pub const BN_EPS: f64 = 1e-7;
/// Weight kept on the old running statistic at each training step.
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel normalization over the last axis. Statistics are taken over
/// every other axis, skipping frames (axis 1) past the item's valid length;
/// those frames are output as zero.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    valid: Vec<bool>,
    n: usize,
    train: bool,
}

fn valid_rows(shape: &[usize], ctx: &Ctx<'_>) -> Vec<bool> {
    let rows: usize = shape[..shape.len() - 1].iter().product();
    if shape.len() < 3 {
        return vec![true; rows];
    }
    let frames = shape[1];
    let inner: usize = shape[2..shape.len() - 1].iter().product();
    (0..rows)
        .map(|r| {
            let b = r / (frames * inner);
            let t = (r / inner) % frames;
            t < ctx.valid(b, frames)
        })
        .collect()
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(T::ONE);
        let mut var = Tensor::zeros(&[channels]);
        var.fill(T::ONE);
        Self {
            gamma: Param::new(gamma),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: var,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let c = self.channels();
        if x.shape().last() != Some(&c) {
            return Err(Error::Shape(format!("batch norm over {c} channels got {:?}", x.shape())));
        }
        let valid = valid_rows(x.shape(), ctx);
        let n = valid.iter().filter(|v| **v).count();
        let train = ctx.mode == Mode::Train;
        let (mean, var) = if train {
            if n == 0 {
                return Err(Error::Shape("batch norm on an empty batch".into()));
            }
            let mut mean = vec![0.0f64; c];
            for (row, _) in x.data().chunks(c).zip(&valid).filter(|(_, v)| **v) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v.to_f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0f64; c];
            for (row, _) in x.data().chunks(c).zip(&valid).filter(|(_, v)| **v) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v.to_f64() - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            for i in 0..c {
                let rm = &mut self.running_mean.data_mut()[i];
                *rm = T::from_f64(BN_MOMENTUM * rm.to_f64() + (1.0 - BN_MOMENTUM) * mean[i]);
                let rv = &mut self.running_var.data_mut()[i];
                *rv = T::from_f64(BN_MOMENTUM * rv.to_f64() + (1.0 - BN_MOMENTUM) * var[i]);
            }
            (mean, var)
        } else {
            (self.running_mean.to_f64(), self.running_var.to_f64())
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / crate::math::sqrt(v + BN_EPS))).collect();
        let mean: Vec<T> = mean.into_iter().map(T::from_f64).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for (((xr, hr), yr), ok) in x
            .data()
            .chunks(c)
            .zip(xhat.data_mut().chunks_mut(c))
            .zip(y.data_mut().chunks_mut(c))
            .zip(&valid)
        {
            if !ok {
                continue;
            }
            for i in 0..c {
                hr[i] = (xr[i] - mean[i]) * inv_std[i];
                yr[i] = g[i] * hr[i] + b[i];
            }
        }
        self.cache = Some(Cache {
            xhat,
            inv_std,
            valid,
            n,
            train,
        });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("backward before forward");
        let c = self.channels();
        let mut sum_g = vec![T::ZERO; c];
        let mut sum_gx = vec![T::ZERO; c];
        for ((gr, hr), _) in grad
            .data()
            .chunks(c)
            .zip(cache.xhat.data().chunks(c))
            .zip(&cache.valid)
            .filter(|(_, v)| **v)
        {
            for i in 0..c {
                sum_g[i] += gr[i];
                sum_gx[i] += gr[i] * hr[i];
            }
        }
        for i in 0..c {
            self.beta.grad.data_mut()[i] += sum_g[i];
            self.gamma.grad.data_mut()[i] += sum_gx[i];
        }
        let gamma = self.gamma.value.data();
        let n = T::from_f64(cache.n.max(1) as f64);
        let mut gx = Tensor::zeros(grad.shape());
        for (((gr, hr), out), ok) in grad
            .data()
            .chunks(c)
            .zip(cache.xhat.data().chunks(c))
            .zip(gx.data_mut().chunks_mut(c))
            .zip(&cache.valid)
        {
            if !ok {
                continue;
            }
            for i in 0..c {
                let scale = gamma[i] * cache.inv_std[i];
                out[i] = if cache.train {
                    scale * (gr[i] - sum_g[i] / n - hr[i] * sum_gx[i] / n)
                } else {
                    scale * gr[i]
                };
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }
}
