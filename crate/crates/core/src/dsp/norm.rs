use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-frequency-bin standardization statistics.
///
/// Computed once from the training split and stored with every checkpoint so
/// inference sees the same feature scaling as training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Bins whose empirical variance was zero; their variance is stored as 1.
    pub flagged_bins: Vec<usize>,
}

impl NormStats {
    /// Zero mean, unit variance: normalization is the identity.
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: vec![0.0; bins],
            var: vec![1.0; bins],
            flagged_bins: Vec::new(),
        }
    }

    /// Two-pass per-bin mean and population variance over all frames.
    pub fn from_magnitudes<'a>(mags: impl IntoIterator<Item = &'a Matrix> + Clone) -> Result<Self> {
        let mut bins = None;
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        for m in mags.clone() {
            let f = *bins.get_or_insert(m.cols());
            if f != m.cols() {
                return Err(Error::shape(format!("{} bins, expected {f}", m.cols())));
            }
            sum.resize(f, 0.0);
            for t in 0..m.rows() {
                for (s, x) in sum.iter_mut().zip(m.row(t)) {
                    *s += x;
                }
            }
            count += m.rows();
        }
        let Some(f) = bins else {
            return Err(Error::shape("no frames to compute statistics from"));
        };
        if count == 0 {
            return Err(Error::shape("no frames to compute statistics from"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; f];
        for m in mags {
            for t in 0..m.rows() {
                for ((s, x), mu) in sq.iter_mut().zip(m.row(t)).zip(&mean) {
                    *s += (x - mu) * (x - mu);
                }
            }
        }
        let mut flagged_bins = Vec::new();
        let var = sq
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let v = s / count as f64;
                if v > 0.0 {
                    v
                } else {
                    flagged_bins.push(i);
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean,
            var,
            flagged_bins,
        })
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.bins() {
            return Err(Error::shape(format!(
                "{} bins, statistics have {}",
                m.cols(),
                self.bins()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, mag: &Matrix) -> Result<Matrix> {
        self.check(mag)?;
        let inv_std: Vec<f64> = self.var.iter().map(|v| 1.0 / v.sqrt()).collect();
        let mut out = mag.clone();
        for t in 0..out.rows() {
            for ((x, mu), s) in out.row_mut(t).iter_mut().zip(&self.mean).zip(&inv_std) {
                *x = (*x - mu) * s;
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, feat: &Matrix) -> Result<Matrix> {
        self.check(feat)?;
        let mut out = feat.clone();
        for t in 0..out.rows() {
            for ((x, mu), v) in out.row_mut(t).iter_mut().zip(&self.mean).zip(&self.var) {
                *x = *x * v.sqrt() + mu;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_with_matching_stats_normalizes_to_zero() {
        let m = Matrix::filled(4, 3, 2.5);
        let stats = NormStats::from_magnitudes([&m]).unwrap();
        assert_eq!(stats.flagged_bins, vec![0, 1, 2]);
        assert!(stats.normalize(&m).unwrap().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_stats_leave_input_unchanged() {
        let m = Matrix::from_fn(3, 5, |r, c| (r * 7 + c) as f64 * 0.3);
        assert_eq!(NormStats::identity(5).normalize(&m).unwrap(), m);
    }

    #[test]
    fn training_set_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mags: Vec<Matrix> = (0..4)
            .map(|_| Matrix::from_fn(20, 6, |_, c| rng.gen_range(0.0..(c + 1) as f64)))
            .collect();
        let stats = NormStats::from_magnitudes(mags.iter()).unwrap();
        let normed: Vec<Matrix> = mags.iter().map(|m| stats.normalize(m).unwrap()).collect();
        for f in 0..6 {
            let vals: Vec<f64> = normed.iter().flat_map(|m| (0..m.rows()).map(move |t| m[(t, f)])).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
        let back = stats.denormalize(&normed[0]).unwrap();
        for (a, b) in back.as_slice().iter().zip(mags[0].as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_count_mismatch_is_an_error() {
        let stats = NormStats::identity(4);
        assert!(stats.normalize(&Matrix::zeros(2, 5)).is_err());
    }
}
