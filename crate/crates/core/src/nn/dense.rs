use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{glorot_uniform, Ctx, Layer, Param, Tensor};
use crate::error::{Error, Result};
use crate::math::Real;

/// Affine map over the last axis, shared across all leading positions.
#[derive(Clone, Debug)]
pub struct Dense<T> {
    /// `[Fin, U]`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng + ?Sized>(fin: usize, units: usize, rng: &mut R) -> Result<Self> {
        if fin == 0 || units == 0 {
            return Err(Error::InvalidConfig(format!("dense {fin}->{units}")));
        }
        Ok(Self {
            weight: Param::new(glorot_uniform(&[fin, units], fin, units, rng)),
            bias: Param::new(Tensor::zeros(&[units])),
            input: None,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

impl<T: Real> Layer<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let (fin, u) = (self.fan_in(), self.units());
        if x.shape().last() != Some(&fin) {
            return Err(Error::Shape(format!("dense expects last axis {fin}, got {:?}", x.shape())));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = u;
        let mut out = Tensor::zeros(&shape);
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        for (xr, yr) in x.data().chunks(fin).zip(out.data_mut().chunks_mut(u)) {
            yr.copy_from_slice(b);
            for (i, &xv) in xr.iter().enumerate() {
                if xv == T::ZERO {
                    continue;
                }
                for (y, &wv) in yr.iter_mut().zip(&w[i * u..(i + 1) * u]) {
                    *y += xv * wv;
                }
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("backward before forward");
        let (fin, u) = (self.fan_in(), self.units());
        let mut gx = Tensor::zeros(x.shape());
        let w = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        for ((xr, gr), gxr) in x.data().chunks(fin).zip(grad.data().chunks(u)).zip(gx.data_mut().chunks_mut(fin)) {
            for (b, &g) in gb.iter_mut().zip(gr) {
                *b += g;
            }
            for i in 0..fin {
                let row = &w[i * u..(i + 1) * u];
                let grow = &mut gw[i * u..(i + 1) * u];
                let mut s = T::ZERO;
                for k in 0..u {
                    s += gr[k] * row[k];
                    grow[k] += gr[k] * xr[i];
                }
                gxr[i] = s;
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}
