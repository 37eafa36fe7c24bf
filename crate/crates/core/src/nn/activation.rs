use alloc::format;

use serde::{Deserialize, Serialize};

use super::{Ctx, Layer, Tensor};
use crate::error::{Error, Result};
use crate::math::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Softmax,
    Tanh,
    Linear,
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sigmoid" => Self::Sigmoid,
            "softmax" => Self::Softmax,
            "tanh" => Self::Tanh,
            "linear" => Self::Linear,
            "relu" => Self::Relu,
            other => return Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Softmax => "softmax",
            Self::Tanh => "tanh",
            Self::Linear => "linear",
            Self::Relu => "relu",
        }
    }

    /// Applies the activation; softmax normalizes over the last axis.
    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        match self {
            Self::Sigmoid => y.data_mut().iter_mut().for_each(|v| *v = v.sigmoid()),
            Self::Tanh => y.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
            Self::Relu => y.data_mut().iter_mut().for_each(|v| *v = v.max(T::ZERO)),
            Self::Linear => {}
            Self::Softmax => {
                let width = *x.shape().last().unwrap_or(&1);
                softmax_rows(y.data_mut(), width);
            }
        }
        y
    }

    /// Gradient with respect to the input given the output `y`.
    pub fn backward<T: Real>(self, y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        let ys = y.data();
        match self {
            Self::Sigmoid => g
                .data_mut()
                .iter_mut()
                .zip(ys)
                .for_each(|(g, &y)| *g *= y * (T::ONE - y)),
            Self::Tanh => g
                .data_mut()
                .iter_mut()
                .zip(ys)
                .for_each(|(g, &y)| *g *= T::ONE - y * y),
            Self::Relu => g.data_mut().iter_mut().zip(ys).for_each(|(g, &y)| {
                if y <= T::ZERO {
                    *g = T::ZERO
                }
            }),
            Self::Linear => {}
            Self::Softmax => {
                let width = *y.shape().last().unwrap_or(&1);
                for (gr, yr) in g.data_mut().chunks_mut(width).zip(ys.chunks(width)) {
                    let dot: T = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
                    for (a, &b) in gr.iter_mut().zip(yr) {
                        *a = b * (*a - dot);
                    }
                }
            }
        }
        g
    }
}

impl core::fmt::Display for Activation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Numerically stable softmax over consecutive rows of `width` values.
pub fn softmax_rows<T: Real>(data: &mut [T], width: usize) {
    for row in data.chunks_mut(width) {
        let m = row.iter().copied().fold(row[0], T::max);
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// An activation used as a standalone layer.
#[derive(Clone, Debug)]
pub struct ActivationLayer<T> {
    pub kind: Activation,
    output: Option<Tensor<T>>,
}

impl<T: Real> ActivationLayer<T> {
    pub fn new(kind: Activation) -> Self {
        Self { kind, output: None }
    }
}

impl<T: Real> Layer<T> for ActivationLayer<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let y = self.kind.apply(x);
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let y = self.output.as_ref().expect("backward before forward");
        self.kind.backward(y, grad)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f64>::from_f64(&[3, 4], &[1.0, 2.0, 3.0, 4.0, -50.0, 0.0, 50.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = Activation::Softmax.apply(&x);
        for row in y.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| v.is_finite()));
        }
        assert_eq!(y.data()[8], 0.25);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let y = Activation::Sigmoid.apply(&Tensor::<f64>::zeros(&[2, 3]));
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn parse_round_trip() {
        for a in [
            Activation::Sigmoid,
            Activation::Softmax,
            Activation::Tanh,
            Activation::Linear,
            Activation::Relu,
        ] {
            assert_eq!(Activation::parse(a.name()).unwrap(), a);
        }
        assert!(Activation::parse("gelu").is_err());
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let h = 1e-6;
        for a in [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::Linear] {
            for &x0 in &[-1.3, 0.4, 2.0] {
                let x = Tensor::<f64>::from_f64(&[1], &[x0]).unwrap();
                let y = a.apply(&x);
                let g = a.backward(&y, &Tensor::from_f64(&[1], &[1.0]).unwrap());
                let up = a.apply(&Tensor::<f64>::from_f64(&[1], &[x0 + h]).unwrap()).data()[0];
                let dn = a.apply(&Tensor::<f64>::from_f64(&[1], &[x0 - h]).unwrap()).data()[0];
                assert!((g.data()[0] - (up - dn) / (2.0 * h)).abs() < 1e-6, "{a} at {x0}");
            }
        }
    }
}
