//! Bidirectional LSTM stacks, the embedding network and the mask network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neural::graph::{Graph, Var};

/// Named parameter traversal. Names are stable and unique within a model.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.len());
        n
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Matrix,
    /// `1 × out`
    pub bias: Matrix,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform(input, output, bound, rng),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn zeroed(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn forward(&self, g: &mut Graph, prefix: &str, x: Var) -> Var {
        let w = g.param(join(prefix, "weight"), &self.weight);
        let b = g.param(join(prefix, "bias"), &self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// One LSTM direction. Gate blocks are ordered `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `in × 4H`
    pub w_ih: Matrix,
    /// `H × 4H`
    pub w_hh: Matrix,
    /// `1 × 4H`; forget block initialized to 1.
    pub bias: Matrix,
}

impl LstmParams {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_ih = uniform(input, 4 * hidden, 1.0 / (input as f64).sqrt(), rng);
        let w_hh = uniform(hidden, 4 * hidden, 1.0 / (hidden as f64).sqrt(), rng);
        let mut bias = Matrix::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            bias[(0, j)] = 1.0;
        }
        Self { w_ih, w_hh, bias }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }

    fn forward(&self, g: &mut Graph, prefix: &str, x: Var, reverse: bool) -> Var {
        let a = g.param(join(prefix, "w_ih"), &self.w_ih);
        let b = g.param(join(prefix, "w_hh"), &self.w_hh);
        let c = g.param(join(prefix, "bias"), &self.bias);
        g.lstm(x, a, b, c, reverse)
    }
}

impl Module for LstmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "w_ih"), &self.w_ih);
        f(join(prefix, "w_hh"), &self.w_hh);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "w_ih"), &mut self.w_ih);
        f(join(prefix, "w_hh"), &mut self.w_hh);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Bidirectional LSTM layer; output is `[forward | backward]`, `T × 2H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Blstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl Blstm {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fwd: LstmParams::new(input, hidden, rng),
            bwd: LstmParams::new(input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden()
    }

    pub fn forward(&self, g: &mut Graph, prefix: &str, x: Var) -> Var {
        let f = self.fwd.forward(g, &join(prefix, "fwd"), x, false);
        let b = self.bwd.forward(g, &join(prefix, "bwd"), x, true);
        g.concat_cols(&[f, b])
    }
}

impl Module for Blstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.fwd.visit_mut(&join(prefix, "fwd"), f);
        self.bwd.visit_mut(&join(prefix, "bwd"), f);
    }
}

fn stack_forward(layers: &[Blstm], g: &mut Graph, prefix: &str, x: Var, dropout: f64) -> Var {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 {
            h = g.dropout(h, dropout);
        }
        h = layer.forward(g, &join(prefix, &format!("blstm{i}")), h);
    }
    h
}

/// Sizes shared by the networks. `desk()` trains in minutes on one core;
/// `paper()` is the full-size configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub bins: usize,
    pub sources: usize,
    pub hidden: usize,
    pub embed_layers: usize,
    pub embed_dim: usize,
    pub sep_layers: usize,
    /// Recurrent depth of the magnitude-input baseline.
    pub baseline_layers: usize,
    pub dropout: f64,
    /// Also feed the normalized mixture magnitude to the mask network.
    pub concat_magnitude: bool,
    /// Networks see `ln(|Y| + 1e-6)` instead of `|Y|` before standardization.
    pub log_input: bool,
}

impl ArchConfig {
    pub fn desk() -> Self {
        Self {
            bins: 129,
            sources: 2,
            hidden: 64,
            embed_layers: 2,
            embed_dim: 8,
            sep_layers: 1,
            baseline_layers: 3,
            dropout: 0.5,
            concat_magnitude: false,
            log_input: false,
        }
    }

    pub fn paper() -> Self {
        Self {
            hidden: 896,
            embed_dim: 40,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig("zero-sized layer".into()));
        }
        if !(2..=6).contains(&self.sources) {
            return Err(Error::UnsupportedSourceCount(self.sources));
        }
        if self.embed_layers == 0 || self.sep_layers == 0 || self.baseline_layers == 0 {
            return Err(Error::InvalidConfig("each stack needs at least one recurrent layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

impl ArchConfig {
    /// Input transform applied to mixture magnitudes ahead of normalization.
    pub fn input_features(&self, mag: &Matrix) -> Matrix {
        if self.log_input {
            mag.map(|x| (x + 1e-6).ln())
        } else {
            mag.clone()
        }
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Stacked BLSTM → linear `2H → F·D` → tanh, reshaped to `TF × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingNet {
    pub layers: Vec<Blstm>,
    pub proj: Linear,
    pub bins: usize,
    pub dim: usize,
    pub dropout: f64,
}

impl EmbeddingNet {
    pub fn new(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut input = arch.bins;
        for _ in 0..arch.embed_layers {
            layers.push(Blstm::new(input, arch.hidden, rng));
            input = 2 * arch.hidden;
        }
        Self {
            proj: Linear::new(input, arch.bins * arch.embed_dim, rng),
            layers,
            bins: arch.bins,
            dim: arch.embed_dim,
            dropout: arch.dropout,
        }
    }

    /// `mag_norm` is `T × F`; returns `TF × D` embeddings.
    pub fn forward(&self, g: &mut Graph, prefix: &str, mag_norm: Var) -> Result<Var> {
        let (t, f) = g.value(mag_norm).shape();
        if f != self.bins {
            return Err(Error::shape(format!("{f} input bins, network expects {}", self.bins)));
        }
        let h = stack_forward(&self.layers, g, prefix, mag_norm, self.dropout);
        let p = self.proj.forward(g, &join(prefix, "proj"), h);
        let v = g.tanh(p);
        Ok(g.reshape(v, t * self.bins, self.dim))
    }
}

impl Module for EmbeddingNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("blstm{i}")), f);
        }
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("blstm{i}")), f);
        }
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// Stacked BLSTM → linear `2H → S·F` → ReLU, split into `S` masks of `T × F`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationNet {
    pub layers: Vec<Blstm>,
    pub head: Linear,
    pub input_dim: usize,
    pub bins: usize,
    pub sources: usize,
    pub dropout: f64,
}

impl SeparationNet {
    pub fn new(input_dim: usize, num_layers: usize, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut input = input_dim;
        for _ in 0..num_layers {
            layers.push(Blstm::new(input, arch.hidden, rng));
            input = 2 * arch.hidden;
        }
        Self {
            head: Linear::new(input, arch.sources * arch.bins, rng),
            layers,
            input_dim,
            bins: arch.bins,
            sources: arch.sources,
            dropout: arch.dropout,
        }
    }

    /// `input` is `T × input_dim`; returns `S` non-negative `T × F` masks.
    pub fn forward(&self, g: &mut Graph, prefix: &str, input: Var) -> Result<Vec<Var>> {
        let width = g.value(input).cols();
        if width != self.input_dim {
            return Err(Error::shape(format!(
                "{width} input features, network expects {}",
                self.input_dim
            )));
        }
        let h = stack_forward(&self.layers, g, prefix, input, self.dropout);
        let z = self.head.forward(g, &join(prefix, "head"), h);
        let m = g.relu(z);
        Ok((0..self.sources)
            .map(|s| g.slice_cols(m, s * self.bins, self.bins))
            .collect())
    }
}

impl Module for SeparationNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("blstm{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("blstm{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
