//! K-means over embedding rows, for the deep-clustering inference path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::EmbeddingMatrix;
use crate::masking::{MaskKind, MaskSet};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = dist2(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Farthest-point seeding followed by Lloyd iterations. Stops once no
/// centroid moves more than `tol` (Euclidean) or after `max_iter` updates.
pub fn kmeans(v: &EmbeddingMatrix, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    let x = v.matrix();
    let n = x.rows();
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k = {k}; need at least 2 clusters")));
    }
    if k > n {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds {n} points")));
    }
    let d = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Matrix::zeros(k, d);
    centroids.row_mut(0).copy_from_slice(x.row(rng.gen_range(0..n)));
    let mut min_d: Vec<f64> = (0..n).map(|i| dist2(x.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let mut far = 0;
        for i in 1..n {
            if min_d[i] > min_d[far] {
                far = i;
            }
        }
        centroids.row_mut(c).copy_from_slice(x.row(far));
        for (i, m) in min_d.iter_mut().enumerate() {
            *m = m.min(dist2(x.row(i), centroids.row(c)));
        }
    }

    let mut assignments = vec![0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (c, dd) = nearest(x.row(i), &centroids);
            *a = c;
            inertia += dd;
        }
        trace.push(inertia);
        if iterations == max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &xi) in sums.row_mut(a).iter_mut().zip(x.row(i)) {
                *s += xi;
            }
        }
        let mut shift = 0.0f64;
        let mut taken = vec![false; n];
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                sums.row(c).iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // Empty cluster: move it onto the point farthest from its own centroid.
                let mut far = None;
                let mut far_d = -1.0;
                for i in 0..n {
                    let dd = dist2(x.row(i), centroids.row(assignments[i]));
                    if !taken[i] && dd > far_d {
                        far = Some(i);
                        far_d = dd;
                    }
                }
                let i = far.expect("k <= n leaves a free point");
                taken[i] = true;
                x.row(i).to_vec()
            };
            shift = shift.max(dist2(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        if shift < tol {
            let mut inertia = 0.0;
            for (i, a) in assignments.iter_mut().enumerate() {
                let (c, dd) = nearest(x.row(i), &centroids);
                *a = c;
                inertia += dd;
            }
            trace.push(inertia);
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        inertia: *trace.last().expect("at least one assignment"),
        iterations,
        inertia_trace: trace,
    })
}

/// One binary mask per cluster: `mask_s[t, f] = 1` iff bin `(t, f)` has label `s`.
pub fn masks_from_assignments(result: &KMeansResult, frames: usize, bins: usize) -> Result<MaskSet> {
    let labels = &result.assignments;
    if labels.len() != frames * bins {
        return Err(Error::shape(format!("{} labels for a {frames}x{bins} plane", labels.len())));
    }
    let k = result.centroids.rows();
    let masks = (0..k)
        .map(|s| Matrix::from_vec(frames, bins, labels.iter().map(|&l| f64::from(u8::from(l == s))).collect()))
        .collect();
    MaskSet::new(masks, MaskKind::Binary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        EmbeddingMatrix::new(Matrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn separated_clouds_are_recovered() {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let off = if i % 2 == 0 { 10.0 } else { -10.0 };
            rows.push(vec![off + (i as f64 * 0.37).sin(), (i as f64 * 0.71).cos()]);
            truth.push(i % 2);
        }
        let r = kmeans(&emb(rows), 2, 3, 100, 1e-9).unwrap();
        let same = r.assignments.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(same == 40 || same == 0);
    }

    #[test]
    fn identical_rows_have_zero_inertia() {
        let r = kmeans(&emb(vec![vec![1.0, 2.0]; 10]), 2, 0, 50, 1e-9).unwrap();
        assert_eq!(r.inertia_trace[0], 0.0);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn k_larger_than_points_is_rejected() {
        assert!(matches!(kmeans(&emb(vec![vec![0.0]; 2]), 3, 0, 10, 1e-6), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn checkerboard_masks_partition_the_plane() {
        let r = KMeansResult {
            centroids: Matrix::zeros(2, 1),
            assignments: (0..12).map(|i| i % 2).collect(),
            inertia: 0.0,
            iterations: 0,
            inertia_trace: vec![0.0],
        };
        let m = masks_from_assignments(&r, 3, 4).unwrap();
        assert_eq!(m.kind(), MaskKind::Binary);
        let total = m.masks()[0].zip_map(&m.masks()[1], |a, b| a + b);
        assert!(total.as_slice().iter().all(|&x| x == 1.0));
        assert_eq!(m.masks()[0][(0, 0)], 1.0);
        assert_eq!(m.masks()[1][(0, 1)], 1.0);
        assert!(masks_from_assignments(&r, 2, 4).is_err());
    }
}
