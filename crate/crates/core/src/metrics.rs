//! SDR / SIR / SAR from zero-delay orthogonal projections.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::losses::permutations;

/// Serialized stand-in for ±∞.
pub const SENTINEL_DB: f64 = 150.0;

/// Energies below this fraction of the estimate energy count as zero.
const ZERO_ENERGY_REL: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    /// Best output↔reference alignment by mean SDR.
    Optimal,
    /// Network output order.
    Default,
}

impl AssignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignMode::Optimal => "optimal",
            AssignMode::Default => "default",
        }
    }
}

impl std::str::FromStr for AssignMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" | "opt" => Ok(AssignMode::Optimal),
            "default" | "def" => Ok(AssignMode::Default),
            _ => Err(Error::InvalidConfig(format!("unknown assignment mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interf: Vec<f64>,
    pub artif: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `G c = r` for a small symmetric positive-definite `G` by Cholesky.
fn cholesky_solve(g: &[Vec<f64>], r: &[f64]) -> Option<Vec<f64>> {
    let n = r.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = g[i][i] - s;
                if d <= g[i][i] * 1e-12 {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (g[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (r[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

fn check_lengths(estimate: &AudioBuffer, references: &[AudioBuffer]) -> Result<()> {
    if let Some(r) = references.iter().find(|r| r.len() != estimate.len()) {
        return Err(Error::shape(format!("estimate has {} samples, reference {}", estimate.len(), r.len())));
    }
    Ok(())
}

/// Splits `estimate` into target, interference and artifact parts whose sum
/// is the estimate.
pub fn decompose(estimate: &AudioBuffer, references: &[AudioBuffer], target_index: usize) -> Result<Decomposition> {
    check_lengths(estimate, references)?;
    if target_index >= references.len() {
        return Err(Error::shape(format!("target {target_index} of {} references", references.len())));
    }
    let e = &estimate.samples;
    let refs: Vec<&[f64]> = references.iter().map(|r| r.samples.as_slice()).collect();
    let energies: Vec<f64> = refs.iter().map(|r| dot(r, r)).collect();
    if let Some(i) = energies.iter().position(|&en| en == 0.0) {
        return Err(Error::DegenerateReference(format!("reference {i} has zero energy")));
    }
    let tgt = refs[target_index];
    let a = dot(e, tgt) / energies[target_index];
    let target: Vec<f64> = tgt.iter().map(|x| a * x).collect();

    let gram: Vec<Vec<f64>> = refs.iter().map(|ri| refs.iter().map(|rj| dot(ri, rj)).collect()).collect();
    let rhs: Vec<f64> = refs.iter().map(|r| dot(r, e)).collect();
    let c = cholesky_solve(&gram, &rhs)
        .ok_or_else(|| Error::DegenerateReference("references are linearly dependent".into()))?;
    let mut proj = vec![0.0; e.len()];
    for (ci, r) in c.iter().zip(&refs) {
        for (p, x) in proj.iter_mut().zip(r.iter()) {
            *p += ci * x;
        }
    }
    let interf: Vec<f64> = proj.iter().zip(&target).map(|(p, t)| p - t).collect();
    let artif: Vec<f64> = e.iter().zip(&proj).map(|(x, p)| x - p).collect();
    Ok(Decomposition { target, interf, artif })
}

fn energy(x: &[f64]) -> f64 {
    dot(x, x)
}

/// `10·log10(num/den)` with energies below `floor` treated as zero:
/// a vanishing numerator gives −∞, a vanishing denominator +∞.
fn ratio_db(num: f64, den: f64, floor: f64) -> f64 {
    if num <= floor {
        f64::NEG_INFINITY
    } else if den <= floor {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// `(SDR, SIR, SAR)` in dB of one estimate against one target.
pub fn source_ratios(estimate: &AudioBuffer, references: &[AudioBuffer], target_index: usize) -> Result<(f64, f64, f64)> {
    let d = decompose(estimate, references, target_index)?;
    let floor = ZERO_ENERGY_REL * energy(&estimate.samples).max(f64::MIN_POSITIVE);
    let st = energy(&d.target);
    let noise: Vec<f64> = d.interf.iter().zip(&d.artif).map(|(i, a)| i + a).collect();
    let sum_ti: Vec<f64> = d.target.iter().zip(&d.interf).map(|(t, i)| t + i).collect();
    Ok((
        ratio_db(st, energy(&noise), floor),
        ratio_db(st, energy(&d.interf), floor),
        ratio_db(energy(&sum_ti), energy(&d.artif), floor),
    ))
}

/// Replaces ±∞ by ±[`SENTINEL_DB`].
pub fn clamp_db(x: f64) -> f64 {
    x.clamp(-SENTINEL_DB, SENTINEL_DB)
}

/// Per-reference scores. `assignment[s]` is the reference matched to
/// output `s`; the dB vectors are indexed by reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationScore {
    pub sdr_db: Vec<f64>,
    pub sir_db: Vec<f64>,
    pub sar_db: Vec<f64>,
    pub assignment: Vec<usize>,
    pub mode: AssignMode,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

impl SeparationScore {
    /// Mean over sources with infinities clamped to the sentinel.
    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr_db.iter().map(|&x| clamp_db(x)).collect::<Vec<_>>())
    }

    pub fn mean_sir(&self) -> f64 {
        mean(&self.sir_db.iter().map(|&x| clamp_db(x)).collect::<Vec<_>>())
    }

    pub fn mean_sar(&self) -> f64 {
        mean(&self.sar_db.iter().map(|&x| clamp_db(x)).collect::<Vec<_>>())
    }
}

pub fn score(estimates: &[AudioBuffer], references: &[AudioBuffer], mode: AssignMode) -> Result<SeparationScore> {
    let s = references.len();
    if estimates.len() != s || s == 0 {
        return Err(Error::shape(format!("{} estimates for {s} references", estimates.len())));
    }
    for e in estimates {
        check_lengths(e, references)?;
    }
    // table[i][j]: output i scored against reference j.
    let table = estimates
        .iter()
        .map(|e| (0..s).map(|j| source_ratios(e, references, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let assignment = match mode {
        AssignMode::Default => (0..s).collect(),
        AssignMode::Optimal => {
            let mut best: Option<(f64, Vec<usize>)> = None;
            for p in permutations(s) {
                let m: f64 = p.iter().enumerate().map(|(i, &j)| clamp_db(table[i][j].0)).sum();
                if best.as_ref().is_none_or(|(b, _)| m > *b) {
                    best = Some((m, p));
                }
            }
            best.expect("at least one permutation").1
        }
    };
    let mut sdr = vec![0.0; s];
    let mut sir = vec![0.0; s];
    let mut sar = vec![0.0; s];
    for (i, &j) in assignment.iter().enumerate() {
        (sdr[j], sir[j], sar[j]) = table[i][j];
    }
    Ok(SeparationScore { sdr_db: sdr, sir_db: sir, sar_db: sar, assignment, mode })
}

/// SDR of the unprocessed mixture against each reference.
pub fn mixture_sdr(mixture: &AudioBuffer, references: &[AudioBuffer]) -> Result<Vec<f64>> {
    (0..references.len())
        .map(|j| source_ratios(mixture, references, j).map(|r| r.0))
        .collect()
}

/// One scored utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub system: String,
    pub split: String,
    pub mode: AssignMode,
    pub sdr_db: Vec<f64>,
    pub sir_db: Vec<f64>,
    pub sar_db: Vec<f64>,
    pub mixture_sdr_db: Vec<f64>,
    pub assignment: Vec<usize>,
}

impl UtteranceRecord {
    pub fn new(id: &str, system: &str, split: &str, score: &SeparationScore, mixture_sdr_db: Vec<f64>) -> Self {
        let c = |v: &[f64]| v.iter().map(|&x| clamp_db(x)).collect();
        Self {
            id: id.to_string(),
            system: system.to_string(),
            split: split.to_string(),
            mode: score.mode,
            sdr_db: c(&score.sdr_db),
            sir_db: c(&score.sir_db),
            sar_db: c(&score.sar_db),
            mixture_sdr_db: c(&mixture_sdr_db),
            assignment: score.assignment.clone(),
        }
    }

    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr_db)
    }

    pub fn mean_sdri(&self) -> f64 {
        mean(&self.sdr_db) - mean(&self.mixture_sdr_db)
    }
}

/// Aggregate over the utterances of one (system, split, mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub split: String,
    pub mode: AssignMode,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub sdri: f64,
    pub n: usize,
    /// Source scores at the −∞ sentinel.
    pub neg_inf: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<UtteranceRecord>,
}

impl CorpusReport {
    /// Groups records by (system, split, mode) in first-seen order.
    pub fn from_records(records: Vec<UtteranceRecord>) -> Self {
        let mut keys: Vec<(String, String, AssignMode)> = Vec::new();
        for r in &records {
            let k = (r.system.clone(), r.split.clone(), r.mode);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let rows = keys
            .into_iter()
            .map(|(system, split, mode)| {
                let group: Vec<&UtteranceRecord> = records
                    .iter()
                    .filter(|r| r.system == system && r.split == split && r.mode == mode)
                    .collect();
                let avg = |f: &dyn Fn(&UtteranceRecord) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64;
                ReportRow {
                    sdr: avg(&|r| mean(&r.sdr_db)),
                    sir: avg(&|r| mean(&r.sir_db)),
                    sar: avg(&|r| mean(&r.sar_db)),
                    sdri: avg(&|r| r.mean_sdri()),
                    n: group.len(),
                    neg_inf: group
                        .iter()
                        .flat_map(|r| &r.sdr_db)
                        .filter(|&&x| x <= -SENTINEL_DB)
                        .count(),
                    system,
                    split,
                    mode,
                }
            })
            .collect();
        Self { rows, records }
    }

    pub fn row(&self, system: &str, split: &str, mode: AssignMode) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.split == split && r.mode == mode)
    }

    pub fn records_for<'a>(&'a self, system: &'a str, split: &'a str, mode: AssignMode) -> impl Iterator<Item = &'a UtteranceRecord> {
        self.records
            .iter()
            .filter(move |r| r.system == system && r.split == split && r.mode == mode)
    }

    pub fn merge(&mut self, other: CorpusReport) {
        let mut records = std::mem::take(&mut self.records);
        records.extend(other.records);
        *self = Self::from_records(records);
    }

    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w$}  {:<5}  {:<7}  {:>8}  {:>8}  {:>8}  {:>8}  {:>5}  {:>6}",
            "system", "split", "mode", "SDR", "SIR", "SAR", "SDRi", "n", "-inf"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<w$}  {:<5}  {:<7}  {:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}  {:>5}  {:>6}",
                r.system,
                r.split,
                r.mode.as_str(),
                r.sdr,
                r.sir,
                r.sar,
                r.sdri,
                r.n,
                r.neg_inf
            );
        }
        out
    }

    /// One JSON object per utterance record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(x: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(x, 8000).unwrap()
    }

    fn orthogonal_pair(n: usize) -> (AudioBuffer, AudioBuffer) {
        let a = (0..n).map(|i| (i as f64 * 0.3).sin() * if i % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>();
        let mut b: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let k = dot(&a, &b) / dot(&a, &a);
        for (bi, ai) in b.iter_mut().zip(&a) {
            *bi -= k * ai;
        }
        (buf(a), buf(b))
    }

    #[test]
    fn decomposition_sums_to_estimate() {
        let (a, b) = orthogonal_pair(200);
        let e = buf((0..200).map(|i| a.samples[i] * 0.7 + b.samples[i] * 0.2 + (i as f64).cos() * 0.1).collect());
        let d = decompose(&e, &[a, b], 0).unwrap();
        for i in 0..200 {
            let s = d.target[i] + d.interf[i] + d.artif[i];
            assert!((s - e.samples[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_and_swapped_estimates() {
        let (a, b) = orthogonal_pair(256);
        let refs = [a.clone(), b.clone()];
        for mode in [AssignMode::Optimal, AssignMode::Default] {
            let s = score(&refs, &refs, mode).unwrap();
            assert!(s.sdr_db.iter().chain(&s.sir_db).chain(&s.sar_db).all(|x| *x == f64::INFINITY));
        }
        let swapped = [b, a];
        let s = score(&swapped, &refs, AssignMode::Optimal).unwrap();
        assert_eq!(s.assignment, vec![1, 0]);
        assert!(s.sdr_db.iter().all(|x| *x == f64::INFINITY));
        let s = score(&swapped, &refs, AssignMode::Default).unwrap();
        assert!(s.sdr_db.iter().all(|x| *x == f64::NEG_INFINITY));
    }

    #[test]
    fn scale_invariance() {
        let (a, b) = orthogonal_pair(128);
        let e = buf((0..128).map(|i| a.samples[i] + 0.3 * b.samples[i] + 0.05 * (i as f64 * 1.3).sin()).collect());
        let r1 = source_ratios(&e, &[a.clone(), b.clone()], 0).unwrap();
        let r2 = source_ratios(&e.scaled(3.5), &[a, b], 0).unwrap();
        assert!((r1.0 - r2.0).abs() < 1e-9 && (r1.1 - r2.1).abs() < 1e-9 && (r1.2 - r2.2).abs() < 1e-9);
    }

    #[test]
    fn zero_reference_is_degenerate() {
        let e = buf(vec![1.0; 8]);
        assert!(matches!(
            decompose(&e, &[buf(vec![0.0; 8]), buf(vec![1.0; 8])], 0),
            Err(Error::DegenerateReference(_))
        ));
        assert!(matches!(score(std::slice::from_ref(&e), &[buf(vec![1.0; 7])], AssignMode::Default), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn report_aggregates_and_renders() {
        let mk = |id: &str, sdr: f64| UtteranceRecord {
            id: id.into(),
            system: "sys".into(),
            split: "test".into(),
            mode: AssignMode::Optimal,
            sdr_db: vec![sdr, sdr],
            sir_db: vec![1.0, 1.0],
            sar_db: vec![2.0, 2.0],
            mixture_sdr_db: vec![0.0, 0.0],
            assignment: vec![0, 1],
        };
        let r = CorpusReport::from_records(vec![mk("a", 4.0), mk("b", 6.0), mk("c", -150.0)]);
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].n, 3);
        assert_eq!(r.rows[0].neg_inf, 2);
        assert!((r.rows[0].sdr - (-140.0 / 3.0)).abs() < 1e-12);
        assert!(r.to_text().contains("sys"));
        assert_eq!(r.to_jsonl().lines().count(), 3);
    }
}
