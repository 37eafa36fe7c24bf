use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{glorot_uniform, Ctx, Layer, Param, Tensor};
use crate::error::{Error, Result};
use crate::math::Real;

/// Gated recurrent unit over `[B, T, Fin] → [B, T, Q]`, gates ordered
/// (update, reset, candidate) along the `3Q` axis. A reversed unit reads
/// each sequence from its last valid frame back to frame 0. Frames past an
/// item's valid length produce zeros and receive no gradient.
#[derive(Clone, Debug)]
pub struct Gru<T> {
    /// `[Fin, 3Q]`.
    pub kernel: Param<T>,
    /// `[Q, 3Q]`.
    pub recurrent: Param<T>,
    /// `[3Q]`.
    pub bias: Param<T>,
    reverse: bool,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    input: Tensor<T>,
    lengths: Vec<usize>,
    /// Per `(b, t)`: state before the step, z, r and candidate, each `Q` wide.
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
}

impl<T: Real> Gru<T> {
    pub fn new<R: Rng + ?Sized>(fin: usize, units: usize, reverse: bool, rng: &mut R) -> Result<Self> {
        if fin == 0 || units == 0 {
            return Err(Error::InvalidConfig(format!("gru {fin}->{units}")));
        }
        Ok(Self {
            kernel: Param::new(glorot_uniform(&[fin, 3 * units], fin, 3 * units, rng)),
            recurrent: Param::new(glorot_uniform(&[units, 3 * units], units, 3 * units, rng)),
            bias: Param::new(Tensor::zeros(&[3 * units])),
            reverse,
            cache: None,
        })
    }

    pub fn units(&self) -> usize {
        self.recurrent.value.shape()[0]
    }

    pub fn fan_in(&self) -> usize {
        self.kernel.value.shape()[0]
    }

    fn order(&self, len: usize) -> impl Iterator<Item = usize> {
        let rev = self.reverse;
        (0..len).map(move |i| if rev { len - 1 - i } else { i })
    }
}

/// `out[j] += Σ_i v[i] · m[i, off + j]` for `j < width`, with `m` having `cols` columns.
#[inline]
fn vec_mat<T: Real>(v: &[T], m: &[T], cols: usize, off: usize, width: usize, out: &mut [T]) {
    for (i, &vi) in v.iter().enumerate() {
        if vi == T::ZERO {
            continue;
        }
        let row = &m[i * cols + off..i * cols + off + width];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += vi * w;
        }
    }
}

/// `out[i] += Σ_j g[j] · m[i, off + j]`.
#[inline]
fn mat_vec_t<T: Real>(g: &[T], m: &[T], cols: usize, off: usize, out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols + off..i * cols + off + g.len()];
        let mut s = T::ZERO;
        for (&a, &b) in g.iter().zip(row) {
            s += a * b;
        }
        *o += s;
    }
}

/// `gm[i, off + j] += v[i] · g[j]`.
#[inline]
fn outer_acc<T: Real>(v: &[T], g: &[T], gm: &mut [T], cols: usize, off: usize) {
    for (i, &vi) in v.iter().enumerate() {
        if vi == T::ZERO {
            continue;
        }
        let row = &mut gm[i * cols + off..i * cols + off + g.len()];
        for (o, &gj) in row.iter_mut().zip(g) {
            *o += vi * gj;
        }
    }
}

impl<T: Real> Layer<T> for Gru<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let s = x.shape();
        let (fin, q) = (self.fan_in(), self.units());
        if s.len() != 3 || s[2] != fin {
            return Err(Error::Shape(format!("gru expects [B, T, {fin}], got {s:?}")));
        }
        let (b, t) = (s[0], s[1]);
        let q3 = 3 * q;
        let lengths: Vec<usize> = (0..b).map(|i| ctx.valid(i, t)).collect();
        let w = self.kernel.value.data();
        let u = self.recurrent.value.data();
        let bias = self.bias.value.data();
        let mut out = Tensor::zeros(&[b, t, q]);
        let n = b * t * q;
        let (mut hp, mut zs, mut rs, mut cs) = (vec![T::ZERO; n], vec![T::ZERO; n], vec![T::ZERO; n], vec![T::ZERO; n]);
        let mut a = vec![T::ZERO; q3];
        let mut rh = vec![T::ZERO; q];
        let mut hu = vec![T::ZERO; 2 * q];
        let mut cu = vec![T::ZERO; q];
        for bi in 0..b {
            let mut h = vec![T::ZERO; q];
            for ti in self.order(lengths[bi]) {
                let row = bi * t + ti;
                let xr = &x.data()[row * fin..(row + 1) * fin];
                a.copy_from_slice(bias);
                vec_mat(xr, w, q3, 0, q3, &mut a);
                hu.fill(T::ZERO);
                vec_mat(&h, u, q3, 0, 2 * q, &mut hu);
                let o = row * q;
                for j in 0..q {
                    zs[o + j] = (a[j] + hu[j]).sigmoid();
                    rs[o + j] = (a[q + j] + hu[q + j]).sigmoid();
                    rh[j] = rs[o + j] * h[j];
                }
                cu.fill(T::ZERO);
                vec_mat(&rh, u, q3, 2 * q, q, &mut cu);
                hp[o..o + q].copy_from_slice(&h);
                for j in 0..q {
                    let c = (a[2 * q + j] + cu[j]).tanh();
                    cs[o + j] = c;
                    h[j] = zs[o + j] * h[j] + (T::ONE - zs[o + j]) * c;
                }
                out.data_mut()[o..o + q].copy_from_slice(&h);
            }
        }
        self.cache = Some(Cache {
            input: x.clone(),
            lengths,
            h_prev: hp,
            z: zs,
            r: rs,
            cand: cs,
        });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("backward before forward");
        let x = &cache.input;
        let (b, t) = (x.shape()[0], x.shape()[1]);
        let (fin, q) = (self.fan_in(), self.units());
        let q3 = 3 * q;
        let mut gx = Tensor::zeros(x.shape());
        let w = self.kernel.value.data().to_vec();
        let u = self.recurrent.value.data().to_vec();
        let mut da = vec![T::ZERO; q3];
        let mut rh = vec![T::ZERO; q];
        let mut drh = vec![T::ZERO; q];
        for bi in 0..b {
            let mut dh = vec![T::ZERO; q];
            let steps: Vec<usize> = self.order(cache.lengths[bi]).collect();
            for &ti in steps.iter().rev() {
                let row = bi * t + ti;
                let o = row * q;
                for j in 0..q {
                    dh[j] += grad.data()[o + j];
                }
                let hp = &cache.h_prev[o..o + q];
                let mut dh_prev = vec![T::ZERO; q];
                for j in 0..q {
                    let (z, r, c) = (cache.z[o + j], cache.r[o + j], cache.cand[o + j]);
                    let dz = dh[j] * (hp[j] - c);
                    let dc = dh[j] * (T::ONE - z);
                    da[j] = dz * z * (T::ONE - z);
                    da[2 * q + j] = dc * (T::ONE - c * c);
                    dh_prev[j] = dh[j] * z;
                    rh[j] = r * hp[j];
                }
                drh.fill(T::ZERO);
                mat_vec_t(&da[2 * q..], &u, q3, 2 * q, &mut drh);
                for j in 0..q {
                    let r = cache.r[o + j];
                    da[q + j] = drh[j] * hp[j] * r * (T::ONE - r);
                    dh_prev[j] += drh[j] * r;
                }
                mat_vec_t(&da[..2 * q], &u, q3, 0, &mut dh_prev);
                let gu = self.recurrent.grad.data_mut();
                outer_acc(hp, &da[..2 * q], gu, q3, 0);
                outer_acc(&rh, &da[2 * q..], gu, q3, 2 * q);
                let xr = &x.data()[row * fin..(row + 1) * fin];
                outer_acc(xr, &da, self.kernel.grad.data_mut(), q3, 0);
                for (gb, &d) in self.bias.grad.data_mut().iter_mut().zip(&da) {
                    *gb += d;
                }
                mat_vec_t(&da, &w, q3, 0, &mut gx.data_mut()[row * fin..(row + 1) * fin]);
                dh = dh_prev;
            }
        }
        self.cache = Some(cache);
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![
            ("kernel", &mut self.kernel),
            ("recurrent", &mut self.recurrent),
            ("bias", &mut self.bias),
        ]
    }
}

/// Forward and reversed GRUs with outputs concatenated per frame as
/// `[forward Q | backward Q]`.
#[derive(Clone, Debug)]
pub struct BiGru<T> {
    pub fwd: Gru<T>,
    pub bwd: Gru<T>,
}

impl<T: Real> BiGru<T> {
    pub fn new<R: Rng + ?Sized>(fin: usize, units: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            fwd: Gru::new(fin, units, false, rng)?,
            bwd: Gru::new(fin, units, true, rng)?,
        })
    }

    pub fn units(&self) -> usize {
        self.fwd.units()
    }
}

impl<T: Real> Layer<T> for BiGru<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let f = self.fwd.forward(x, ctx)?;
        let b = self.bwd.forward(x, ctx)?;
        Tensor::concat_last(&[&f, &b])
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let q = self.units();
        let parts = grad.split_last(&[q, q]);
        let mut gx = self.fwd.backward(&parts[0]);
        let gb = self.bwd.backward(&parts[1]);
        gx.data_mut().iter_mut().zip(gb.data()).for_each(|(a, b)| *a += *b);
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![
            ("fwd_kernel", &mut self.fwd.kernel),
            ("fwd_recurrent", &mut self.fwd.recurrent),
            ("fwd_bias", &mut self.fwd.bias),
            ("bwd_kernel", &mut self.bwd.kernel),
            ("bwd_recurrent", &mut self.bwd.recurrent),
            ("bwd_bias", &mut self.bwd.bias),
        ]
    }
}
