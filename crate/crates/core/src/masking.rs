//! Ideal masks, mask application and source reconstruction.

use serde::{Deserialize, Serialize};

use crate::dsp::{istft, AudioBuffer, Spectrogram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mixture magnitudes below this get an ideal mask of 0.
pub const MAG_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Network output; non-negative.
    Estimated,
    /// Ideal phase-sensitive mask; unbounded unless clamped.
    Ipsm,
    /// One-hot partition of the TF plane.
    Binary,
}

/// `S` real `T × F` masks.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    masks: Vec<Matrix>,
    kind: MaskKind,
}

impl MaskSet {
    pub fn new(masks: Vec<Matrix>, kind: MaskKind) -> Result<Self> {
        let Some(first) = masks.first() else {
            return Err(Error::shape("empty mask set"));
        };
        let shape = first.shape();
        if masks.iter().any(|m| m.shape() != shape) {
            return Err(Error::shape("masks differ in shape"));
        }
        match kind {
            MaskKind::Estimated => {
                if masks.iter().flat_map(|m| m.as_slice()).any(|&x| !(x >= 0.0)) {
                    return Err(Error::ContractViolation(
                        "estimated mask has negative or non-finite entries".into(),
                    ));
                }
            }
            MaskKind::Binary => {
                for i in 0..first.len() {
                    let mut sum = 0.0;
                    for m in &masks {
                        let x = m.as_slice()[i];
                        if x != 0.0 && x != 1.0 {
                            return Err(Error::ContractViolation(format!("binary mask value {x}")));
                        }
                        sum += x;
                    }
                    if sum != 1.0 {
                        return Err(Error::ContractViolation(
                            "binary masks do not partition the TF plane".into(),
                        ));
                    }
                }
            }
            MaskKind::Ipsm => {
                if masks.iter().any(|m| !m.all_finite()) {
                    return Err(Error::ContractViolation("non-finite IPSM".into()));
                }
            }
        }
        Ok(Self { masks, kind })
    }

    pub fn masks(&self) -> &[Matrix] {
        &self.masks
    }

    pub fn into_masks(self) -> Vec<Matrix> {
        self.masks
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn num_sources(&self) -> usize {
        self.masks.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.masks[0].shape()
    }

    /// Masks in a new output order: `result[i] = self[order[i]]`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            masks: order.iter().map(|&i| self.masks[i].clone()).collect(),
            kind: self.kind,
        }
    }
}

/// One-hot dominant-source labels, one per TF bin in row-major `(t, f)` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipMatrix {
    labels: Vec<usize>,
    num_sources: usize,
}

impl MembershipMatrix {
    pub fn from_labels(labels: Vec<usize>, num_sources: usize) -> Result<Self> {
        if let Some(&l) = labels.iter().find(|&&l| l >= num_sources) {
            return Err(Error::shape(format!("label {l} with {num_sources} sources")));
        }
        Ok(Self {
            labels,
            num_sources,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_bins(&self) -> usize {
        self.labels.len()
    }

    /// `TF × C` one-hot matrix `B`.
    pub fn to_dense(&self) -> Matrix {
        let mut b = Matrix::zeros(self.labels.len(), self.num_sources);
        for (i, &l) in self.labels.iter().enumerate() {
            b[(i, l)] = 1.0;
        }
        b
    }

    /// `Σ_c` over rows of `B` for each source, i.e. bins owned per source.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_sources];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

fn check_shapes(sources: &[Spectrogram], mixture: &Spectrogram) -> Result<()> {
    if sources.len() < 2 {
        return Err(Error::shape(format!("{} sources, need at least 2", sources.len())));
    }
    if let Some(s) = sources.iter().find(|s| s.shape() != mixture.shape()) {
        return Err(Error::shape(format!(
            "source {:?} vs mixture {:?}",
            s.shape(),
            mixture.shape()
        )));
    }
    Ok(())
}

/// Phase-sensitive targets `|X_s|·cos(θ_y − θ_s)`, zero where `|Y| < ε`.
pub fn psa_targets(sources: &[Spectrogram], mixture: &Spectrogram) -> Result<Vec<Matrix>> {
    check_shapes(sources, mixture)?;
    let ymag = mixture.magnitude();
    let yph = mixture.phase();
    Ok(sources
        .iter()
        .map(|s| {
            let mut out = Matrix::zeros(ymag.rows(), ymag.cols());
            for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
                if ymag.as_slice()[i] >= MAG_EPS {
                    *o = s.magnitude().as_slice()[i] * (yph.as_slice()[i] - s.phase().as_slice()[i]).cos();
                }
            }
            out
        })
        .collect())
}

/// Ideal phase-sensitive mask `|X_s| cos(θ_y − θ_s) / |Y|`; optional clamp to `[0, 1]`.
pub fn ipsm(sources: &[Spectrogram], mixture: &Spectrogram, clamp: bool) -> Result<MaskSet> {
    let targets = psa_targets(sources, mixture)?;
    let ymag = mixture.magnitude();
    let masks = targets
        .into_iter()
        .map(|t| {
            let mut m = t.zip_map(ymag, |x, y| if y >= MAG_EPS { x / y } else { 0.0 });
            if clamp {
                m = m.map(|x| x.clamp(0.0, 1.0));
            }
            m
        })
        .collect();
    MaskSet::new(masks, MaskKind::Ipsm)
}

/// Labels each bin with `argmax_s |X_s|`, ties to the lowest index.
pub fn dominant_membership(sources: &[Spectrogram]) -> Result<MembershipMatrix> {
    if sources.len() < 2 {
        return Err(Error::shape(format!("{} sources, need at least 2", sources.len())));
    }
    let shape = sources[0].shape();
    if sources.iter().any(|s| s.shape() != shape) {
        return Err(Error::shape("sources differ in shape"));
    }
    let n = shape.0 * shape.1;
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_mag = sources[0].magnitude().as_slice()[i];
            for (s, spec) in sources.iter().enumerate().skip(1) {
                let m = spec.magnitude().as_slice()[i];
                if m > best_mag {
                    best = s;
                    best_mag = m;
                }
            }
            best
        })
        .collect();
    MembershipMatrix::from_labels(labels, sources.len())
}

/// `|Y| ⊙ M_s` with the mixture phase.
pub fn apply_mask(mixture: &Spectrogram, masks: &MaskSet) -> Result<Vec<Spectrogram>> {
    if masks.shape() != mixture.shape() {
        return Err(Error::shape(format!(
            "masks {:?} vs mixture {:?}",
            masks.shape(),
            mixture.shape()
        )));
    }
    if masks.kind() == MaskKind::Estimated
        && masks.masks().iter().flat_map(|m| m.as_slice()).any(|&x| x < 0.0)
    {
        return Err(Error::ContractViolation("negative estimated mask".into()));
    }
    masks.masks().iter().map(|m| mixture.scaled_by(m)).collect()
}

pub fn reconstruct(mixture: &Spectrogram, masks: &MaskSet) -> Result<Vec<AudioBuffer>> {
    apply_mask(mixture, masks)?.iter().map(istft).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000).unwrap()
    }

    fn tone(freq: f64, len: usize) -> AudioBuffer {
        AudioBuffer::new(
            (0..len).map(|n| (2.0 * PI * freq * n as f64 / 8000.0).sin()).collect(),
            8000,
        )
        .unwrap()
    }

    fn spec(a: &AudioBuffer) -> Spectrogram {
        stft(a, &StftConfig::default()).unwrap()
    }

    fn sum(a: &AudioBuffer, b: &AudioBuffer) -> AudioBuffer {
        AudioBuffer::new(a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(), 8000).unwrap()
    }

    #[test]
    fn ipsm_of_lone_source_is_one_where_energetic() {
        let a = noise(2000, 1);
        let z = AudioBuffer::zeros(2000, 8000);
        let y = spec(&a);
        let m = ipsm(&[spec(&a), spec(&z)], &y, false).unwrap();
        for (i, &v) in m.masks()[0].as_slice().iter().enumerate() {
            if y.magnitude().as_slice()[i] >= MAG_EPS {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        assert!(m.masks()[1].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ipsm_arithmetic() {
        use rustfft::num_complex::Complex64;
        let cfg = StftConfig::default();
        let mk = |z: Complex64| Spectrogram::from_complex(1, 129, vec![z; 129], cfg.clone(), 8000, 256).unwrap();
        let y = mk(Complex64::new(2.0, 0.0));
        let m = ipsm(&[mk(Complex64::new(1.0, 0.0)), mk(Complex64::new(1.0, 0.0))], &y, false).unwrap();
        assert!((m.masks()[0][(0, 3)] - 0.5).abs() < 1e-15);
        let m = ipsm(&[mk(Complex64::new(0.0, 1.0)), mk(Complex64::new(2.0, -1.0))], &y, false).unwrap();
        assert!(m.masks()[0][(0, 3)].abs() < 1e-15);
    }

    #[test]
    fn ipsm_sums_to_one_on_energetic_bins() {
        let (a, b) = (noise(3000, 2), noise(3000, 3).scaled(0.5));
        let y = spec(&sum(&a, &b));
        let m = ipsm(&[spec(&a), spec(&b)], &y, false).unwrap();
        for i in 0..y.magnitude().len() {
            if y.magnitude().as_slice()[i] > MAG_EPS {
                let s = m.masks()[0].as_slice()[i] + m.masks()[1].as_slice()[i];
                assert!((s - 1.0).abs() < 1e-9, "bin {i}: {s}");
            }
        }
        let clamped = ipsm(&[spec(&a), spec(&b)], &y, true).unwrap();
        assert!(clamped.masks().iter().flat_map(|m| m.as_slice()).all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn membership_follows_disjoint_supports_and_ties() {
        let (a, b) = (tone(500.0, 2000), tone(2000.0, 2000));
        let (sa, sb) = (spec(&a), spec(&b));
        let m = dominant_membership(&[sa.clone(), sb.clone()]).unwrap();
        let f = sa.bins();
        assert_eq!(m.labels()[3 * f + 16], 0);
        assert_eq!(m.labels()[3 * f + 64], 1);
        let tie = dominant_membership(&[sa.clone(), sa]).unwrap();
        assert!(tie.labels().iter().all(|&l| l == 0));
        let dense = m.to_dense();
        for r in 0..dense.rows() {
            assert_eq!(dense.row(r).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn membership_matches_bruteforce_argmax() {
        let srcs: Vec<Spectrogram> = (0..3).map(|s| spec(&noise(1500, 10 + s))).collect();
        let m = dominant_membership(&srcs).unwrap();
        for i in 0..m.num_bins() {
            let mags: Vec<f64> = srcs.iter().map(|s| s.magnitude().as_slice()[i]).collect();
            let max = mags.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(m.labels()[i], mags.iter().position(|&x| x == max).unwrap());
        }
    }

    #[test]
    fn mask_application_identities() {
        let y = spec(&noise(2000, 4));
        let (t, f) = y.shape();
        let ones = MaskSet::new(vec![Matrix::filled(t, f, 1.0), Matrix::zeros(t, f)], MaskKind::Estimated).unwrap();
        let est = apply_mask(&y, &ones).unwrap();
        assert_eq!(est[0].magnitude(), y.magnitude());
        assert!(est[1].magnitude().as_slice().iter().all(|&x| x == 0.0));

        let checker = Matrix::from_fn(t, f, |r, c| ((r + c) % 2) as f64);
        let inv = checker.map(|x| 1.0 - x);
        let bin = MaskSet::new(vec![checker, inv], MaskKind::Binary).unwrap();
        let est = apply_mask(&y, &bin).unwrap();
        for i in 0..y.magnitude().len() {
            let s = est[0].magnitude().as_slice()[i] + est[1].magnitude().as_slice()[i];
            assert!((s - y.magnitude().as_slice()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_estimated_mask_is_a_contract_violation() {
        let err = MaskSet::new(vec![Matrix::filled(2, 2, -0.1), Matrix::zeros(2, 2)], MaskKind::Estimated);
        assert!(matches!(err, Err(Error::ContractViolation(_))));
        let bad = MaskSet::new(vec![Matrix::filled(2, 2, 0.5), Matrix::filled(2, 2, 0.5)], MaskKind::Binary);
        assert!(matches!(bad, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn reconstruction_of_all_ones_and_zeros() {
        let x = noise(3000, 5);
        let y = spec(&x);
        let (t, f) = y.shape();
        let set = MaskSet::new(vec![Matrix::filled(t, f, 1.0), Matrix::zeros(t, f)], MaskKind::Estimated).unwrap();
        let out = reconstruct(&y, &set).unwrap();
        assert_eq!(out[0].len(), x.len());
        let err: f64 = out[0].samples.iter().zip(&x.samples).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err.sqrt() / x.energy().sqrt() < 1e-10);
        assert!(out[1].samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_mask_is_linear_in_the_mask() {
        let y = spec(&noise(2000, 6));
        let (t, f) = y.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m1 = Matrix::from_fn(t, f, |_, _| rng.gen_range(0.0..1.0));
        let m2 = Matrix::from_fn(t, f, |_, _| rng.gen_range(0.0..1.0));
        let mut msum = m1.clone();
        msum.add_scaled(&m2, 2.0);
        let e = |m: &Matrix| apply_mask(&y, &MaskSet::new(vec![m.clone(), m.clone()], MaskKind::Estimated).unwrap()).unwrap();
        let (a, b, c) = (e(&m1), e(&m2), e(&msum));
        for i in 0..a[0].complex_bins().len() {
            let lin = a[0].complex_bins()[i] + b[0].complex_bins()[i] * 2.0;
            assert!((lin - c[0].complex_bins()[i]).norm() < 1e-12);
        }
    }
}
