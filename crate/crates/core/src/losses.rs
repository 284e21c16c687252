//! Training objectives.
//!
//! Each objective exists twice: a plain numeric form used for evaluation and
//! reporting, and a graph form that builds differentiable nodes on a
//! [`Graph`]. Both compute the same quantities in the same summation order.

use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::masking::{psa_targets, MaskSet, MembershipMatrix};
use crate::matrix::Matrix;
use crate::neural::{Graph, Var};

/// Largest source count for exhaustive permutation search.
pub const MAX_SOURCES: usize = 6;

/// `TF × D` embeddings, one row per TF bin in row-major `(t, f)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix(Matrix);

impl EmbeddingMatrix {
    pub fn new(v: Matrix) -> Result<Self> {
        if !v.all_finite() {
            return Err(Error::NumericGuardTripped("non-finite embedding".into()));
        }
        Ok(Self(v))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn num_bins(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

/// Optional `1 / (TF)²` scaling of the deep-clustering loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DcNorm {
    /// `‖VVᵀ − BBᵀ‖²_F` exactly.
    None,
    /// Divided by `(TF)²`.
    Bins,
}

impl DcNorm {
    fn factor(self, bins: usize) -> f64 {
        match self {
            DcNorm::None => 1.0,
            DcNorm::Bins => 1.0 / (bins as f64 * bins as f64),
        }
    }
}

/// `‖VVᵀ − BBᵀ‖²_F` via `‖VᵀV‖² − 2‖VᵀB‖² + ‖BᵀB‖²`, never forming `TF × TF`.
pub fn dc_loss(v: &EmbeddingMatrix, b: &MembershipMatrix, norm: DcNorm) -> Result<f64> {
    if v.num_bins() != b.num_bins() {
        return Err(Error::shape(format!(
            "{} embedding rows vs {} membership rows",
            v.num_bins(),
            b.num_bins()
        )));
    }
    let vm = v.matrix();
    let vtv = vm.t_matmul(vm);
    let vtb = vm.t_matmul(&b.to_dense());
    let btb: f64 = b.counts().iter().map(|&c| (c * c) as f64).sum();
    Ok((vtv.sum_squares() - 2.0 * vtb.sum_squares() + btb) * norm.factor(v.num_bins()))
}

/// Graph form of [`dc_loss`]; `b` is the dense `TF × C` membership.
pub fn dc_loss_graph(g: &mut Graph, v: Var, b: &Matrix, norm: DcNorm) -> Result<Var> {
    let rows = g.value(v).rows();
    if rows != b.rows() {
        return Err(Error::shape(format!("{rows} embedding rows vs {} membership rows", b.rows())));
    }
    let btb = b.t_matmul(b).sum_squares();
    let bv = g.constant(b.clone());
    let vtv = g.t_matmul(v, v);
    let vtb = g.t_matmul(v, bv);
    let a = g.sum_squares(vtv);
    let c = g.sum_squares(vtb);
    let s = norm.factor(rows);
    Ok(g.lin_comb(&[(a, s), (c, -2.0 * s)], btb * s))
}

/// `C[i][j] = (1/TF)·‖|Y| ⊙ M_i − target_j‖²_F`: cost of pairing output `i`
/// with reference `j`.
pub fn pairwise_costs(masks: &[Matrix], mixture_mag: &Matrix, targets: &[Matrix]) -> Result<Matrix> {
    let s = masks.len();
    if targets.len() != s {
        return Err(Error::shape(format!("{s} masks vs {} targets", targets.len())));
    }
    let shape = mixture_mag.shape();
    if masks.iter().chain(targets).any(|m| m.shape() != shape) {
        return Err(Error::shape("mask/target/mixture shapes differ"));
    }
    let inv = 1.0 / (shape.0 * shape.1) as f64;
    let est: Vec<Matrix> = masks.iter().map(|m| m.zip_map(mixture_mag, |a, b| a * b)).collect();
    Ok(Matrix::from_fn(s, s, |i, j| {
        est[i]
            .as_slice()
            .iter()
            .zip(targets[j].as_slice())
            .map(|(e, t)| (e - t) * (e - t))
            .sum::<f64>()
            * inv
    }))
}

/// Graph form of [`pairwise_costs`]; returns `S × S` scalar nodes.
pub fn pairwise_costs_graph(g: &mut Graph, masks: &[Var], mixture_mag: &Matrix, targets: &[Matrix]) -> Result<Vec<Vec<Var>>> {
    let s = masks.len();
    if targets.len() != s {
        return Err(Error::shape(format!("{s} masks vs {} targets", targets.len())));
    }
    let shape = mixture_mag.shape();
    if masks.iter().any(|&m| g.value(m).shape() != shape) || targets.iter().any(|t| t.shape() != shape) {
        return Err(Error::shape("mask/target/mixture shapes differ"));
    }
    let inv = 1.0 / (shape.0 * shape.1) as f64;
    let y = g.constant(mixture_mag.clone());
    let tv: Vec<Var> = targets.iter().map(|t| g.constant(t.clone())).collect();
    let mut out = Vec::with_capacity(s);
    for &m in masks {
        let est = g.mul(m, y);
        let mut row = Vec::with_capacity(s);
        for &t in &tv {
            let d = g.sub(est, t);
            let ss = g.sum_squares(d);
            row.push(g.scale(ss, inv));
        }
        out.push(row);
    }
    Ok(out)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

/// Costs of every output→reference assignment. `perms[p][s]` is the
/// reference assigned to output `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTable {
    pub perms: Vec<Vec<usize>>,
    pub costs: Vec<f64>,
    pub chosen: usize,
}

impl PermutationTable {
    /// Each permutation's cost is `Σ_s C[s][perm(s)]`; the minimum wins,
    /// ties going to the lexicographically smallest permutation.
    pub fn from_pairwise(pairwise: &Matrix) -> Result<Self> {
        let s = pairwise.rows();
        if pairwise.cols() != s {
            return Err(Error::shape("pairwise cost matrix must be square"));
        }
        if !(2..=MAX_SOURCES).contains(&s) {
            return Err(Error::UnsupportedSourceCount(s));
        }
        let perms = permutations(s);
        let costs: Vec<f64> = perms
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| pairwise[(i, j)]).sum())
            .collect();
        let mut chosen = 0;
        for (k, &c) in costs.iter().enumerate() {
            if c < costs[chosen] {
                chosen = k;
            }
        }
        Ok(Self { perms, costs, chosen })
    }

    pub fn best_cost(&self) -> f64 {
        self.costs[self.chosen]
    }

    pub fn best_perm(&self) -> &[usize] {
        &self.perms[self.chosen]
    }

    /// `Σ_{φ≠φ*} cost(φ)`
    pub fn others_sum(&self) -> f64 {
        self.costs
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != self.chosen)
            .map(|(_, c)| c)
            .sum()
    }

    /// Mean non-chosen cost minus the chosen cost.
    pub fn separation_gap(&self) -> f64 {
        let others = self.costs.len() - 1;
        if others == 0 {
            0.0
        } else {
            self.others_sum() / others as f64 - self.best_cost()
        }
    }
}

/// `(1/TF)·Σ_s ‖|Y|⊙M̃_s − |X_perm(s)|·cos(θ_y − θ_perm(s))‖²_F`
pub fn psa_cost(masks: &MaskSet, mixture: &Spectrogram, sources: &[Spectrogram], perm: &[usize]) -> Result<f64> {
    if masks.num_sources() != sources.len() || perm.len() != sources.len() {
        return Err(Error::shape(format!(
            "{} masks, {} sources, permutation of {}",
            masks.num_sources(),
            sources.len(),
            perm.len()
        )));
    }
    let targets = psa_targets(sources, mixture)?;
    let c = pairwise_costs(masks.masks(), mixture.magnitude(), &targets)?;
    Ok(perm.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum())
}

pub fn find_best_perm(masks: &MaskSet, mixture: &Spectrogram, sources: &[Spectrogram]) -> Result<PermutationTable> {
    if sources.len() > MAX_SOURCES {
        return Err(Error::UnsupportedSourceCount(sources.len()));
    }
    let targets = psa_targets(sources, mixture)?;
    PermutationTable::from_pairwise(&pairwise_costs(masks.masks(), mixture.magnitude(), &targets)?)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} must be a finite value ≥ 0")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `φ* − α·Σ_{φ≠φ*} φ`
pub fn dl_loss(table: &PermutationTable, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(table.best_cost() - alpha * table.others_sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub j_dc: f64,
    /// Cost of the chosen permutation.
    pub phi_star: f64,
    /// `−α·Σ_{φ≠φ*} φ` when the discriminative term is on, else 0.
    pub dl_term: f64,
    pub table: Option<PermutationTable>,
    pub lambda: f64,
    pub alpha: f64,
    pub use_dl: bool,
}

impl LossReport {
    /// Recomputes the total from the components.
    pub fn recomputed_total(&self) -> f64 {
        self.lambda * self.j_dc + (1.0 - self.lambda) * (self.phi_star + self.dl_term)
    }
}

/// `λ·J_DC + (1−λ)·(φ* − α·Σφ)` with the discriminative term, or
/// `λ·J_DC + (1−λ)·φ*` without it.
pub fn joint_loss(j_dc: f64, table: &PermutationTable, lambda: f64, alpha: f64, use_dl: bool) -> Result<LossReport> {
    check_lambda(lambda)?;
    check_alpha(alpha)?;
    let phi_star = table.best_cost();
    let dl_term = if use_dl { -alpha * table.others_sum() } else { 0.0 };
    let total = if lambda == 1.0 {
        j_dc
    } else {
        lambda * j_dc + (1.0 - lambda) * (phi_star + dl_term)
    };
    Ok(LossReport {
        total,
        j_dc,
        phi_star,
        dl_term,
        table: Some(table.clone()),
        lambda,
        alpha,
        use_dl,
    })
}

/// Graph form of [`joint_loss`]. The permutation is selected from the
/// current values and treated as a constant; gradients flow through the
/// chosen cost and, scaled by `−α`, the non-chosen ones.
pub fn joint_loss_graph(
    g: &mut Graph,
    j_dc: Option<Var>,
    pairwise: &[Vec<Var>],
    lambda: f64,
    alpha: f64,
    use_dl: bool,
) -> Result<(Var, LossReport)> {
    check_lambda(lambda)?;
    check_alpha(alpha)?;
    let s = pairwise.len();
    let values = Matrix::from_fn(s, s, |i, j| g.scalar(pairwise[i][j]));
    let table = PermutationTable::from_pairwise(&values)?;
    let jdc_value = j_dc.map_or(0.0, |v| g.scalar(v));
    let report = joint_loss(jdc_value, &table, lambda, alpha, use_dl)?;

    // d total / d C[i][j] = (1−λ)·(#chosen uses − α·#other uses)
    let mut weights = Matrix::zeros(s, s);
    for (k, p) in table.perms.iter().enumerate() {
        let w = if k == table.chosen {
            1.0
        } else if use_dl {
            -alpha
        } else {
            0.0
        };
        for (i, &j) in p.iter().enumerate() {
            weights[(i, j)] += w;
        }
    }
    let mut terms = Vec::new();
    if let Some(v) = j_dc {
        if lambda != 0.0 {
            terms.push((v, lambda));
        }
    }
    if lambda != 1.0 {
        for (i, row) in pairwise.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let w = weights[(i, j)] * (1.0 - lambda);
                if w != 0.0 {
                    terms.push((c, w));
                }
            }
        }
    }
    let total = g.lin_comb(&terms, 0.0);
    Ok((total, report))
}
