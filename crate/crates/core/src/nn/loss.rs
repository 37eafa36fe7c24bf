//! Losses averaged over unmasked rows. A row is one frame of one batch item;
//! `valid[r] == false` removes it from both the loss and its gradient.

use alloc::format;

use super::Tensor;
use crate::error::{Error, Result};
use crate::math::{self, Real};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;
pub const CCE_CLAMP: f64 = 1e-7;

fn rows<T: Real>(pred: &Tensor<T>, valid: Option<&[bool]>) -> Result<(usize, usize)> {
    let width = *pred.shape().last().ok_or_else(|| Error::Shape("scalar prediction".into()))?;
    let n = if width == 0 { 0 } else { pred.len() / width };
    if let Some(v) = valid {
        if v.len() != n {
            return Err(Error::Shape(format!("{} mask rows for {n} prediction rows", v.len())));
        }
    }
    Ok((n, width))
}

fn is_valid(valid: Option<&[bool]>, r: usize) -> bool {
    valid.map_or(true, |v| v[r])
}

/// Mean binary cross-entropy over every entry of the valid rows.
pub fn loss_bce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, valid: Option<&[bool]>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let (n, w) = rows(pred, valid)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in (0..n).filter(|&r| is_valid(valid, r)) {
        for k in r * w..(r + 1) * w {
            let p = pred.data()[k].to_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = target.data()[k].to_f64();
            sum -= y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / count as f64)
}

/// Gradient of [`loss_bce`] with respect to the probabilities.
pub fn bce_prob_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, valid: Option<&[bool]>) -> Result<Tensor<T>> {
    let (n, w) = rows(pred, valid)?;
    let count = (0..n).filter(|&r| is_valid(valid, r)).count() * w;
    let mut g = Tensor::zeros(pred.shape());
    for r in (0..n).filter(|&r| is_valid(valid, r)) {
        for k in r * w..(r + 1) * w {
            let p = pred.data()[k].to_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let y = target.data()[k].to_f64();
            g.data_mut()[k] = T::from_f64((-y / p + (1.0 - y) / (1.0 - p)) / count as f64);
        }
    }
    Ok(g)
}

/// Gradient of sigmoid followed by [`loss_bce`] with respect to the logits,
/// given the sigmoid outputs.
pub fn bce_logit_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, valid: Option<&[bool]>) -> Result<Tensor<T>> {
    let (n, w) = rows(pred, valid)?;
    let count = (0..n).filter(|&r| is_valid(valid, r)).count() * w;
    let scale = T::from_f64(1.0 / count.max(1) as f64);
    let mut g = Tensor::zeros(pred.shape());
    for r in (0..n).filter(|&r| is_valid(valid, r)) {
        for k in r * w..(r + 1) * w {
            g.data_mut()[k] = (pred.data()[k] - target.data()[k]) * scale;
        }
    }
    Ok(g)
}

fn check_classes<T: Real>(pred: &Tensor<T>, target: &[usize], valid: Option<&[bool]>) -> Result<(usize, usize)> {
    let (n, w) = rows(pred, valid)?;
    if target.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} rows", target.len())));
    }
    if let Some(&bad) = target.iter().find(|&&c| c >= w) {
        return Err(Error::CountOutOfRange { count: bad, max: w - 1 });
    }
    Ok((n, w))
}

/// Mean over valid rows of `-ln p[target]`.
pub fn loss_cce<T: Real>(pred: &Tensor<T>, target: &[usize], valid: Option<&[bool]>) -> Result<f64> {
    let (n, w) = check_classes(pred, target, valid)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in (0..n).filter(|&r| is_valid(valid, r)) {
        let p = pred.data()[r * w + target[r]].to_f64().clamp(CCE_CLAMP, 1.0);
        sum -= math::ln(p);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / count as f64)
}

/// Gradient of softmax followed by [`loss_cce`] with respect to the logits.
pub fn cce_logit_grad<T: Real>(pred: &Tensor<T>, target: &[usize], valid: Option<&[bool]>) -> Result<Tensor<T>> {
    let (n, w) = check_classes(pred, target, valid)?;
    let count = (0..n).filter(|&r| is_valid(valid, r)).count();
    let scale = T::from_f64(1.0 / count.max(1) as f64);
    let mut g = Tensor::zeros(pred.shape());
    for r in (0..n).filter(|&r| is_valid(valid, r)) {
        for k in 0..w {
            let y = if k == target[r] { T::ONE } else { T::ZERO };
            g.data_mut()[r * w + k] = (pred.data()[r * w + k] - y) * scale;
        }
    }
    Ok(g)
}
