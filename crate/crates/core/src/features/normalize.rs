use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::FeatureTensor;
use crate::error::{Error, Result};
use crate::math;

const STD_FLOOR: f64 = 1e-8;

/// Per-(bin, depth) mean and standard deviation over training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub n_bins: usize,
    pub depth: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Population statistics pooled over every frame of `feats`.
    pub fn compute<'a>(feats: impl IntoIterator<Item = &'a FeatureTensor>) -> Result<Self> {
        let mut shape = None;
        let mut sum = Vec::new();
        let mut sum_sq = Vec::new();
        let mut count = 0usize;
        for f in feats {
            let (_, b, d) = f.shape();
            match shape {
                None => {
                    shape = Some((b, d));
                    sum = vec![0.0; b * d];
                    sum_sq = vec![0.0; b * d];
                }
                Some(s) if s != (b, d) => {
                    return Err(Error::Shape(format!("feature slab {b}x{d} differs from {}x{}", s.0, s.1)))
                }
                _ => {}
            }
            for t in 0..f.n_frames() {
                for (i, &x) in f.frame(t).iter().enumerate() {
                    sum[i] += x;
                    sum_sq[i] += x * x;
                }
            }
            count += f.n_frames();
        }
        let (n_bins, depth) = shape.ok_or(Error::EmptyDataset)?;
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| math::sqrt((sq / n - m * m).max(0.0)))
            .collect();
        Ok(Self {
            n_bins,
            depth,
            mean,
            std,
        })
    }
}

/// z-normalizes each (bin, depth) cell with training statistics.
pub fn normalize_features(stats: &FeatureStats, feats: &FeatureTensor) -> Result<FeatureTensor> {
    let (_, b, d) = feats.shape();
    if (b, d) != (stats.n_bins, stats.depth) {
        return Err(Error::Shape(format!(
            "stats for {}x{} applied to {}x{}",
            stats.n_bins, stats.depth, b, d
        )));
    }
    let mut out = feats.clone();
    let slab = b * d;
    for (i, x) in out.data_mut().iter_mut().enumerate() {
        let k = i % slab;
        *x = (*x - stats.mean[k]) / stats.std[k].max(STD_FLOOR);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use alloc::string::ToString;

    fn tensor(data: Vec<f64>, t: usize) -> FeatureTensor {
        FeatureTensor::new(FeatureKind::Mbe, 0.02, vec!["a".to_string(), "b".to_string()], t, 1, data).unwrap()
    }

    #[test]
    fn training_set_is_standardized() {
        let a = tensor(vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0], 3);
        let b = tensor(vec![7.0, 5.0, -1.0, 5.0], 2);
        let stats = FeatureStats::compute([&a, &b]).unwrap();
        let na = normalize_features(&stats, &a).unwrap();
        let nb = normalize_features(&stats, &b).unwrap();
        let col0: Vec<f64> = na.data().iter().chain(nb.data()).step_by(2).copied().collect();
        let mean = col0.iter().sum::<f64>() / 5.0;
        let var = col0.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
        // Constant column collapses to zero.
        assert!(na.data().iter().skip(1).step_by(2).all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = tensor(vec![1.0, 2.0], 1);
        let stats = FeatureStats {
            n_bins: 2,
            depth: 2,
            mean: vec![0.0; 4],
            std: vec![1.0; 4],
        };
        assert!(normalize_features(&stats, &a).is_err());
    }
}
