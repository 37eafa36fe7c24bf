//! 2D convolutions over (time, frequency) with zero "same" padding, and the
//! 3D variant whose kernel also spans a window of the channel axis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{glorot_uniform, Ctx, Layer, Param, Tensor};
use crate::error::{Error, Result};
use crate::math::Real;

/// Geometry of one convolution call over `[B, T, F, C]` input.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    frames: usize,
    bins: usize,
    in_ch: usize,
    kt: usize,
    kf: usize,
    filters: usize,
}

/// Accumulates the convolution of channels `[c0, c0 + width)` into `out`,
/// where `w` is laid out `[P, kt, kf, width]`. Summation per output is over
/// taps in (kt, kf) order with the channel window innermost.
fn conv_window_forward<T: Real>(g: Geometry, x: &[T], w: &[T], c0: usize, width: usize, out: &mut [T]) {
    let (pt, pf) = (g.kt / 2, g.kf / 2);
    let mut acc = vec![T::ZERO; g.filters];
    for b in 0..g.batch {
        for t in 0..g.frames {
            for f in 0..g.bins {
                acc.fill(T::ZERO);
                for it in 0..g.kt {
                    let tt = t + it;
                    if tt < pt || tt - pt >= g.frames {
                        continue;
                    }
                    let tt = tt - pt;
                    for jf in 0..g.kf {
                        let ff = f + jf;
                        if ff < pf || ff - pf >= g.bins {
                            continue;
                        }
                        let ff = ff - pf;
                        let xo = ((b * g.frames + tt) * g.bins + ff) * g.in_ch + c0;
                        let xs = &x[xo..xo + width];
                        for (p, a) in acc.iter_mut().enumerate() {
                            let wo = ((p * g.kt + it) * g.kf + jf) * width;
                            let ws = &w[wo..wo + width];
                            let mut s = T::ZERO;
                            for (xv, wv) in xs.iter().zip(ws) {
                                s += *xv * *wv;
                            }
                            *a += s;
                        }
                    }
                }
                let oo = ((b * g.frames + t) * g.bins + f) * g.filters;
                out[oo..oo + g.filters].copy_from_slice(&acc);
            }
        }
    }
}

/// Backward of [`conv_window_forward`] for outputs selected by `route`
/// (`None` selects all). Accumulates into `gx` and `gw`.
#[allow(clippy::too_many_arguments)]
fn conv_window_backward<T: Real>(
    g: Geometry,
    x: &[T],
    w: &[T],
    c0: usize,
    width: usize,
    grad: &[T],
    route: Option<(&[u32], u32)>,
    gx: &mut [T],
    gw: &mut [T],
) {
    let (pt, pf) = (g.kt / 2, g.kf / 2);
    for b in 0..g.batch {
        for t in 0..g.frames {
            for f in 0..g.bins {
                let oo = ((b * g.frames + t) * g.bins + f) * g.filters;
                let gs = &grad[oo..oo + g.filters];
                for it in 0..g.kt {
                    let tt = t + it;
                    if tt < pt || tt - pt >= g.frames {
                        continue;
                    }
                    let tt = tt - pt;
                    for jf in 0..g.kf {
                        let ff = f + jf;
                        if ff < pf || ff - pf >= g.bins {
                            continue;
                        }
                        let ff = ff - pf;
                        let xo = ((b * g.frames + tt) * g.bins + ff) * g.in_ch + c0;
                        for (p, &gp) in gs.iter().enumerate() {
                            if gp == T::ZERO {
                                continue;
                            }
                            if let Some((sel, which)) = route {
                                if sel[oo + p] != which {
                                    continue;
                                }
                            }
                            let wo = ((p * g.kt + it) * g.kf + jf) * width;
                            for k in 0..width {
                                gw[wo + k] += gp * x[xo + k];
                                gx[xo + k] += gp * w[wo + k];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(x: &Tensor<T>, kt: usize, kf: usize, filters: usize) -> Result<Geometry> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("convolution expects [B, T, F, C], got {s:?}")));
    }
    Ok(Geometry {
        batch: s[0],
        frames: s[1],
        bins: s[2],
        in_ch: s[3],
        kt,
        kf,
        filters,
    })
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += *b;
        }
    }
}

fn bias_grad<T: Real>(grad: &[T], gb: &mut [T]) {
    for row in grad.chunks(gb.len()) {
        for (g, r) in gb.iter_mut().zip(row) {
            *g += *r;
        }
    }
}

/// `kt × kf` convolution over all input channels, `[B,T,F,Cin] → [B,T,F,P]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    /// `[P, kt, kf, Cin]`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_ch: usize,
    kt: usize,
    kf: usize,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, filters: usize, kt: usize, kf: usize, rng: &mut R) -> Result<Self> {
        if kt % 2 == 0 || kf % 2 == 0 || in_ch == 0 || filters == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv2d needs odd kernel and positive sizes, got {kt}x{kf}, {in_ch}->{filters}"
            )));
        }
        let weight = glorot_uniform(&[filters, kt, kf, in_ch], kt * kf * in_ch, kt * kf * filters, rng);
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[filters])),
            in_ch,
            kt,
            kf,
            input: None,
        })
    }

    pub fn filters(&self) -> usize {
        self.bias.len()
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let g = geometry(x, self.kt, self.kf, self.filters())?;
        if g.in_ch != self.in_ch {
            return Err(Error::Shape(format!("conv2d expects {} channels, got {}", self.in_ch, g.in_ch)));
        }
        let mut out = Tensor::zeros(&[g.batch, g.frames, g.bins, g.filters]);
        conv_window_forward(g, x.data(), self.weight.value.data(), 0, g.in_ch, out.data_mut());
        add_bias(out.data_mut(), self.bias.value.data());
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("backward before forward");
        let g = geometry(x, self.kt, self.kf, self.filters()).expect("cached input is 4-D");
        let mut gx = Tensor::zeros(x.shape());
        conv_window_backward(
            g,
            x.data(),
            self.weight.value.data(),
            0,
            g.in_ch,
            grad.data(),
            None,
            gx.data_mut(),
            self.weight.grad.data_mut(),
        );
        bias_grad(grad.data(), self.bias.grad.data_mut());
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

/// Convolution over (channel, time, frequency) volumes: the kernel spans
/// `depth` adjacent channels and slides validly along the channel axis,
/// with same-padding on time and frequency. When the kernel is shallower
/// than the input, the output keeps the maximum over depth positions so the
/// result is `[B, T, F, P]` either way.
#[derive(Clone, Debug)]
pub struct Conv3d<T> {
    /// `[P, kt, kf, depth]`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    depth: usize,
    kt: usize,
    kf: usize,
    input: Option<Tensor<T>>,
    argmax: Vec<u32>,
}

impl<T: Real> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(depth: usize, filters: usize, kt: usize, kf: usize, rng: &mut R) -> Result<Self> {
        if kt % 2 == 0 || kf % 2 == 0 || depth == 0 || filters == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv3d needs odd kernel and positive sizes, got {depth}x{kt}x{kf}, {filters} filters"
            )));
        }
        let weight = glorot_uniform(&[filters, kt, kf, depth], kt * kf * depth, kt * kf * filters, rng);
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[filters])),
            depth,
            kt,
            kf,
            input: None,
            argmax: Vec::new(),
        })
    }

    pub fn filters(&self) -> usize {
        self.bias.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

impl<T: Real> Layer<T> for Conv3d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let g = geometry(x, self.kt, self.kf, self.filters())?;
        if self.depth > g.in_ch {
            return Err(Error::Shape(format!(
                "conv3d kernel depth {} exceeds input depth {}",
                self.depth, g.in_ch
            )));
        }
        let positions = g.in_ch - self.depth + 1;
        let mut out = Tensor::zeros(&[g.batch, g.frames, g.bins, g.filters]);
        conv_window_forward(g, x.data(), self.weight.value.data(), 0, self.depth, out.data_mut());
        self.argmax = vec![0; out.len()];
        if positions > 1 {
            let mut alt = Tensor::zeros(out.shape());
            for d in 1..positions {
                conv_window_forward(g, x.data(), self.weight.value.data(), d, self.depth, alt.data_mut());
                for ((o, a), m) in out.data_mut().iter_mut().zip(alt.data()).zip(self.argmax.iter_mut()) {
                    if *a > *o {
                        *o = *a;
                        *m = d as u32;
                    }
                }
            }
        }
        add_bias(out.data_mut(), self.bias.value.data());
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.as_ref().expect("backward before forward");
        let g = geometry(x, self.kt, self.kf, self.filters()).expect("cached input is 4-D");
        let positions = g.in_ch - self.depth + 1;
        let mut gx = Tensor::zeros(x.shape());
        for d in 0..positions {
            let route = (positions > 1).then_some((self.argmax.as_slice(), d as u32));
            conv_window_backward(
                g,
                x.data(),
                self.weight.value.data(),
                d,
                self.depth,
                grad.data(),
                route,
                gx.data_mut(),
                self.weight.grad.data_mut(),
            );
        }
        bias_grad(grad.data(), self.bias.grad.data_mut());
        gx
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}
