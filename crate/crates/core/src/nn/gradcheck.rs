//! Central-difference verification of reverse-mode gradients in `f64`.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bce_logit_grad, cce_logit_grad, loss_bce, loss_cce, Activation, Ctx, Layer, Mode, Tensor,
};

/// Difference step.
pub const FD_STEP: f64 = 1e-5;

/// A scalar function of a flat coordinate vector with an analytic gradient.
pub trait Probe {
    /// Current coordinates.
    fn point(&mut self) -> Vec<f64>;
    fn value(&mut self, x: &[f64]) -> f64;
    fn gradient(&mut self, x: &[f64]) -> Vec<f64>;
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between analytic and central-difference
/// gradients over at most `max_coords` randomly chosen coordinates.
pub fn finite_diff_check(probe: &mut dyn Probe, max_coords: usize, seed: u64) -> f64 {
    let x0 = probe.point();
    let grad = probe.gradient(&x0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, x0.len(), max_coords.min(x0.len()));
    let mut worst = 0.0f64;
    let mut x = x0.clone();
    for i in picks.iter() {
        x[i] = x0[i] + FD_STEP;
        let up = probe.value(&x);
        x[i] = x0[i] - FD_STEP;
        let dn = probe.value(&x);
        x[i] = x0[i];
        worst = worst.max(relative_error(grad[i], (up - dn) / (2.0 * FD_STEP)));
    }
    worst
}

/// Like [`finite_diff_check`], but a coordinate also passes when the
/// analytic value matches a one-sided difference. Networks built from ReLU
/// and max pooling are only piecewise smooth; at a kink the reverse-mode
/// gradient equals one of the one-sided derivatives.
pub fn finite_diff_check_piecewise(probe: &mut dyn Probe, max_coords: usize, seed: u64) -> f64 {
    const ONE_SIDED: f64 = 1e-7;
    let x0 = probe.point();
    let grad = probe.gradient(&x0);
    let f0 = probe.value(&x0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, x0.len(), max_coords.min(x0.len()));
    let mut worst = 0.0f64;
    let mut x = x0.clone();
    for i in picks.iter() {
        let mut at = |d: f64| {
            x[i] = x0[i] + d;
            let v = probe.value(&x);
            x[i] = x0[i];
            v
        };
        let central = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
        let fwd = (at(ONE_SIDED) - f0) / ONE_SIDED;
        let bwd = (f0 - at(-ONE_SIDED)) / ONE_SIDED;
        let e = [central, fwd, bwd]
            .into_iter()
            .map(|n| relative_error(grad[i], n))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(e);
    }
    worst
}

/// Checks a layer through `L = Σ c·y` with fixed random `c`, over the
/// input entries followed by every parameter entry.
pub struct LayerProbe<L> {
    pub layer: L,
    pub input: Tensor<f64>,
    pub mode: Mode,
    pub lengths: Option<Vec<usize>>,
    coeff: Option<Vec<f64>>,
    seed: u64,
}

impl<L: Layer<f64>> LayerProbe<L> {
    pub fn new(layer: L, input: Tensor<f64>, mode: Mode, seed: u64) -> Self {
        Self {
            layer,
            input,
            mode,
            lengths: None,
            coeff: None,
            seed,
        }
    }

    fn load(&mut self, x: &[f64]) {
        let n = self.input.len();
        self.input.data_mut().copy_from_slice(&x[..n]);
        let mut off = n;
        for (_, p) in self.layer.params_mut() {
            let k = p.len();
            p.value.data_mut().copy_from_slice(&x[off..off + k]);
            p.zero_grad();
            off += k;
        }
    }

    fn run(&mut self) -> Tensor<f64> {
        // Dropout-like layers see the same stream on every evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lengths = self.lengths.clone();
        let mut ctx = Ctx {
            mode: self.mode,
            rng: &mut rng,
            lengths: lengths.as_deref(),
        };
        let y = self.layer.forward(&self.input, &mut ctx).expect("probe forward");
        if self.coeff.is_none() {
            let mut r = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
            self.coeff = Some((0..y.len()).map(|_| r.gen_range(-1.0..1.0)).collect());
        }
        y
    }
}

impl<L: Layer<f64>> Probe for LayerProbe<L> {
    fn point(&mut self) -> Vec<f64> {
        let mut x = self.input.data().to_vec();
        for (_, p) in self.layer.params_mut() {
            x.extend_from_slice(p.value.data());
        }
        x
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.load(x);
        let y = self.run();
        y.data().iter().zip(self.coeff.as_ref().unwrap()).map(|(a, b)| a * b).sum()
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        self.load(x);
        let y = self.run();
        let g = Tensor::from_vec(y.shape(), self.coeff.clone().unwrap()).unwrap();
        let gx = self.layer.backward(&g);
        let mut out = gx.data().to_vec();
        for (_, p) in self.layer.params_mut() {
            out.extend_from_slice(p.grad.data());
        }
        out
    }
}

/// Which fused output/loss pair a [`LossProbe`] checks.
pub enum LossKind {
    /// Sigmoid then binary cross-entropy against a 0/1 target.
    Bce(Tensor<f64>),
    /// Softmax then categorical cross-entropy against class indices.
    Cce(Vec<usize>),
}

/// Checks a fused loss gradient with respect to its logits.
pub struct LossProbe {
    pub logits: Tensor<f64>,
    pub kind: LossKind,
    pub valid: Option<Vec<bool>>,
}

impl LossProbe {
    fn eval(&self, x: &[f64]) -> (Tensor<f64>, f64) {
        let z = Tensor::from_vec(self.logits.shape(), x.to_vec()).unwrap();
        let valid = self.valid.as_deref();
        match &self.kind {
            LossKind::Bce(y) => {
                let p = Activation::Sigmoid.apply(&z);
                let l = loss_bce(&p, y, valid).unwrap();
                (p, l)
            }
            LossKind::Cce(c) => {
                let p = Activation::Softmax.apply(&z);
                let l = loss_cce(&p, c, valid).unwrap();
                (p, l)
            }
        }
    }
}

impl Probe for LossProbe {
    fn point(&mut self) -> Vec<f64> {
        self.logits.data().to_vec()
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.eval(x).1
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        let (p, _) = self.eval(x);
        let valid = self.valid.as_deref();
        match &self.kind {
            LossKind::Bce(y) => bce_logit_grad(&p, y, valid),
            LossKind::Cce(c) => cce_logit_grad(&p, c, valid),
        }
        .unwrap()
        .into_data()
    }
}

/// Uniform random tensor in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random binary targets.
pub fn random_binary(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = random_tensor(shape, seed);
    t.data_mut().iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::nn::{BatchNorm, BiGru, Conv2d, Conv3d, Dense, Dropout, MaxPoolFreq};

    const TOL: f64 = 1e-4;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn dense_gradient() {
        let layer = Dense::<f64>::new(5, 4, &mut rng(1)).unwrap();
        let mut p = LayerProbe::new(layer, random_tensor(&[2, 3, 5], 2), Mode::Train, 3);
        assert!(finite_diff_check(&mut p, 200, 4) < TOL);
    }

    #[test]
    fn conv2d_gradient() {
        let layer = Conv2d::<f64>::new(3, 4, 3, 3, &mut rng(1)).unwrap();
        let mut p = LayerProbe::new(layer, random_tensor(&[2, 4, 5, 3], 2), Mode::Train, 3);
        assert!(finite_diff_check(&mut p, 300, 4) < TOL);
    }

    #[test]
    fn conv3d_gradient() {
        let layer = Conv3d::<f64>::new(4, 3, 3, 3, &mut rng(1)).unwrap();
        let mut p = LayerProbe::new(layer, random_tensor(&[1, 4, 5, 4], 2), Mode::Train, 3);
        assert!(finite_diff_check(&mut p, 300, 4) < TOL);
        let shallow = Conv3d::<f64>::new(2, 3, 3, 3, &mut rng(5)).unwrap();
        let mut p = LayerProbe::new(shallow, random_tensor(&[1, 4, 5, 4], 6), Mode::Train, 7);
        assert!(finite_diff_check(&mut p, 300, 4) < TOL);
    }

    #[test]
    fn batch_norm_gradient() {
        let mut layer = BatchNorm::<f64>::new(3);
        layer.gamma.value = Tensor::from_f64(&[3], &[0.7, 1.3, -0.4]).unwrap();
        layer.beta.value = Tensor::from_f64(&[3], &[0.1, 0.0, -0.2]).unwrap();
        let mut p = LayerProbe::new(layer, random_tensor(&[2, 4, 2, 3], 2), Mode::Train, 3);
        p.lengths = Some(vec![3, 4]);
        assert!(finite_diff_check(&mut p, 200, 4) < TOL);
        let mut p = LayerProbe::new(BatchNorm::<f64>::new(3), random_tensor(&[2, 4, 2, 3], 9), Mode::Eval, 3);
        assert!(finite_diff_check(&mut p, 200, 4) < TOL);
    }

    #[test]
    fn bigru_gradient_over_eight_steps() {
        let layer = BiGru::<f64>::new(3, 4, &mut rng(1)).unwrap();
        let mut p = LayerProbe::new(layer, random_tensor(&[2, 8, 3], 2), Mode::Train, 3);
        assert!(finite_diff_check(&mut p, 400, 4) < TOL);
        let layer = BiGru::<f64>::new(3, 2, &mut rng(8)).unwrap();
        let mut p = LayerProbe::new(layer, random_tensor(&[2, 8, 3], 9), Mode::Train, 3);
        p.lengths = Some(vec![8, 5]);
        assert!(finite_diff_check(&mut p, 400, 4) < TOL);
    }

    #[test]
    fn pool_dropout_activation_gradients() {
        let mut p = LayerProbe::new(MaxPoolFreq::new(3).unwrap(), random_tensor(&[1, 2, 6, 2], 2), Mode::Train, 3);
        assert!(finite_diff_check(&mut p, 100, 4) < TOL);
        let mut p = LayerProbe::new(Dropout::<f64>::new(0.4).unwrap(), random_tensor(&[3, 7], 2), Mode::Train, 3);
        assert!(finite_diff_check(&mut p, 100, 4) < TOL);
        for a in [Activation::Sigmoid, Activation::Softmax, Activation::Tanh, Activation::Relu, Activation::Linear] {
            let layer = crate::nn::ActivationLayer::<f64>::new(a);
            let mut p = LayerProbe::new(layer, random_tensor(&[3, 5], 2), Mode::Train, 3);
            assert!(finite_diff_check(&mut p, 100, 4) < TOL, "{a}");
        }
    }

    #[test]
    fn fused_loss_gradients() {
        let mut p = LossProbe {
            logits: random_tensor(&[6, 4], 1),
            kind: LossKind::Bce(random_binary(&[6, 4], 2)),
            valid: Some(vec![true, true, false, true, true, false]),
        };
        assert!(finite_diff_check(&mut p, 24, 3) < TOL);
        let mut p = LossProbe {
            logits: random_tensor(&[5, 7], 1),
            kind: LossKind::Cce(vec![0, 6, 3, 3, 1]),
            valid: None,
        };
        assert!(finite_diff_check(&mut p, 35, 3) < TOL);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        struct Bad;
        impl Probe for Bad {
            fn point(&mut self) -> Vec<f64> {
                vec![1.0, 2.0]
            }
            fn value(&mut self, x: &[f64]) -> f64 {
                x[0] * x[0] + x[1]
            }
            fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
                vec![x[0], 1.0]
            }
        }
        assert!(finite_diff_check(&mut Bad, 2, 0) > 0.4);
    }
}
