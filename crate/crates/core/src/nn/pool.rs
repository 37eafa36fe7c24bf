use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Ctx, Layer, Tensor};
use crate::error::{Error, Result};
use crate::math::Real;

/// Non-overlapping max pooling along the frequency axis of `[B, T, F, C]`.
#[derive(Clone, Debug)]
pub struct MaxPoolFreq {
    pool: usize,
    in_shape: Vec<usize>,
    argmax: Vec<u32>,
}

impl MaxPoolFreq {
    pub fn new(pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(Error::InvalidConfig("pool size must be positive".into()));
        }
        Ok(Self {
            pool,
            in_shape: Vec::new(),
            argmax: Vec::new(),
        })
    }

    pub fn pool(&self) -> usize {
        self.pool
    }
}

impl<T: Real> Layer<T> for MaxPoolFreq {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("pooling expects [B, T, F, C], got {s:?}")));
        }
        let (bt, f, c) = (s[0] * s[1], s[2], s[3]);
        if f % self.pool != 0 {
            return Err(Error::Shape(format!("pool {} does not divide {f} bins", self.pool)));
        }
        let fo = f / self.pool;
        let mut out = Tensor::zeros(&[s[0], s[1], fo, c]);
        self.argmax = vec![0; out.len()];
        let xd = x.data();
        for r in 0..bt {
            for j in 0..fo {
                for ch in 0..c {
                    let o = (r * fo + j) * c + ch;
                    let mut best = j * self.pool;
                    for k in j * self.pool + 1..(j + 1) * self.pool {
                        if xd[(r * f + k) * c + ch] > xd[(r * f + best) * c + ch] {
                            best = k;
                        }
                    }
                    out.data_mut()[o] = xd[(r * f + best) * c + ch];
                    self.argmax[o] = ((r * f + best) * c + ch) as u32;
                }
            }
        }
        self.in_shape = s.to_vec();
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut gx = Tensor::zeros(&self.in_shape);
        for (&i, &g) in self.argmax.iter().zip(grad.data()) {
            gx.data_mut()[i as usize] += g;
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(schedule: &[usize], f: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = Tensor::<f64>::zeros(&[1, 7, f, 3]);
        x.fill(0.25);
        for &p in schedule {
            let mut ctx = Ctx { mode: Mode::Eval, rng: &mut rng, lengths: None };
            x = MaxPoolFreq::new(p).unwrap().forward(&x, &mut ctx).unwrap();
            assert!(x.data().iter().all(|&v| v == 0.25));
        }
        x.shape().to_vec()
    }

    #[test]
    fn schedules_reach_two_bins() {
        assert_eq!(run(&[5, 2, 2], 40), [1, 7, 2, 3]);
        assert_eq!(run(&[5, 3, 2], 60), [1, 7, 2, 3]);
    }

    #[test]
    fn picks_maximum_and_routes_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::from_f64(&[1, 1, 4, 1], &[1.0, 3.0, -1.0, -2.0]).unwrap();
        let mut p = MaxPoolFreq::new(2).unwrap();
        let mut ctx = Ctx { mode: Mode::Eval, rng: &mut rng, lengths: None };
        let y = p.forward(&x, &mut ctx).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
        let g = Layer::<f64>::backward(&mut p, &Tensor::from_f64(&[1, 1, 2, 1], &[10.0, 20.0]).unwrap());
        assert_eq!(g.data(), &[0.0, 10.0, 20.0, 0.0]);
    }

    #[test]
    fn non_divisible_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = Ctx { mode: Mode::Eval, rng: &mut rng, lengths: None };
        let x = Tensor::<f64>::zeros(&[1, 2, 7, 1]);
        assert!(MaxPoolFreq::new(2).unwrap().forward(&x, &mut ctx).is_err());
    }
}
