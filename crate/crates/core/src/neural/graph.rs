//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node to the tape; node ids are topologically
//! ordered by construction, so the backward pass is a single reverse sweep.
//! The LSTM recurrence is a fused node with a hand-written adjoint.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) struct LstmSaved {
    pub x: Var,
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub reverse: bool,
    /// Post-activation gates `[i f g o]`, `T × 4H`.
    pub gates: Matrix,
    /// Cell state, `T × H`.
    pub cell: Matrix,
    /// `tanh(cell)`, `T × H`.
    pub cell_tanh: Matrix,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `aᵀ · b`
    TMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a + 1·bias` for a `1 × n` bias row.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Dropout(Var, Matrix),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    SumSquares(Var),
    Sum(Var),
    /// `offset + Σ c_i · x_i` over same-shape operands.
    LinComb(Vec<(Var, f64)>),
    Lstm(Box<LstmSaved>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Computation graph for one forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    training: bool,
    rng: ChaCha8Rng,
    guard: Option<String>,
    consumed: bool,
}

/// Gradients of a scalar root with respect to every tracked leaf.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of the named parameters registered with [`Graph::param`].
    pub fn into_params(mut self) -> ParamGrads {
        let mut out = BTreeMap::new();
        for (name, v) in &self.params {
            if let Some(g) = self.grads[v.0].take() {
                out.insert(name.clone(), g);
            }
        }
        ParamGrads(out)
    }
}

/// Parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads(pub BTreeMap<String, Matrix>);

impl ParamGrads {
    /// Accumulates `other` into `self`.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (k, g) in &other.0 {
            match self.0.get_mut(k) {
                Some(acc) => acc.add_scaled(g, 1.0),
                None => {
                    self.0.insert(k.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.0.values_mut() {
            g.scale_in_place(s);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Matrix::all_finite)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            guard: None,
            consumed: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        if self.guard.is_none() && !value.all_finite() {
            self.guard = Some(format!("node {} ({:?}) produced a non-finite value", self.nodes.len(), op_name(&op)));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Untracked input.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Tracked input without a parameter name.
    pub fn variable(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Tracked, named parameter leaf (copied into the graph).
    pub fn param(&mut self, name: impl Into<String>, m: &Matrix) -> Var {
        let v = self.push(m.clone(), Op::Leaf, true);
        self.params.push((name.into(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    /// Errors if any node so far produced NaN or ±∞.
    pub fn guard(&self) -> Result<()> {
        match &self.guard {
            Some(msg) => Err(Error::NumericGuardTripped(msg.clone())),
            None => Ok(()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn t_matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).t_matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::TMatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row");
        assert_eq!(b.cols(), self.value(a).cols(), "bias width");
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(v, Op::AddRow(a, bias), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    /// Inverted dropout; identity in eval mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let (r, c) = self.value(a).shape();
        let mask = Matrix::from_fn(r, c, |_, _| {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        let ng = self.ng(a);
        self.push(v, Op::Dropout(a, mask), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).clone().reshaped(rows, cols);
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    /// `Σ x²` as a `1 × 1` node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).sum_squares());
        let ng = self.ng(a);
        self.push(v, Op::SumSquares(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    /// `offset + Σ c_i · x_i`; operands share a shape.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)], offset: f64) -> Var {
        let shape = terms
            .first()
            .map_or((1, 1), |(v, _)| self.value(*v).shape());
        let mut v = Matrix::filled(shape.0, shape.1, offset);
        for &(x, c) in terms {
            v.add_scaled(self.value(x), c);
        }
        let ng = terms.iter().any(|&(x, _)| self.ng(x));
        self.push(v, Op::LinComb(terms.to_vec()), ng)
    }

    /// One LSTM direction over `x` (`T × In`), gates ordered `[i f g o]`.
    /// `reverse` processes time from `T−1` down to 0; the output stays
    /// aligned with the input time axis.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Var {
        let xs = self.value(x);
        let wih = self.value(w_ih);
        let whh = self.value(w_hh);
        let b = self.value(bias);
        let h = whh.rows();
        assert_eq!(whh.cols(), 4 * h, "w_hh shape");
        assert_eq!(wih.cols(), 4 * h, "w_ih shape");
        assert_eq!(wih.rows(), xs.cols(), "w_ih rows vs input width");
        assert_eq!(b.shape(), (1, 4 * h), "bias shape");
        let t_len = xs.rows();

        let mut pre = Matrix::zeros(t_len, 4 * h);
        gemm(xs, false, wih, false, &mut pre, 0.0);
        for r in 0..t_len {
            for (z, bb) in pre.row_mut(r).iter_mut().zip(b.as_slice()) {
                *z += bb;
            }
        }
        let mut gates = pre;
        let mut cell = Matrix::zeros(t_len, h);
        let mut cell_tanh = Matrix::zeros(t_len, h);
        let mut out = Matrix::zeros(t_len, h);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let z = gates.row_mut(t);
            for (k, &hk) in h_prev.iter().enumerate() {
                if hk != 0.0 {
                    for (zz, w) in z.iter_mut().zip(whh.row(k)) {
                        *zz += hk * w;
                    }
                }
            }
            for j in 0..h {
                z[j] = sigmoid(z[j]);
                z[h + j] = sigmoid(z[h + j]);
                z[2 * h + j] = z[2 * h + j].tanh();
                z[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            for j in 0..h {
                let c = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
                let tc = c.tanh();
                let hv = z[3 * h + j] * tc;
                cell[(t, j)] = c;
                cell_tanh[(t, j)] = tc;
                out[(t, j)] = hv;
                c_prev[j] = c;
                h_prev[j] = hv;
            }
        }
        let ng = self.ng(x) || self.ng(w_ih) || self.ng(w_hh) || self.ng(bias);
        self.push(
            out,
            Op::Lstm(Box::new(LstmSaved {
                x,
                w_ih,
                w_hh,
                bias,
                reverse,
                gates,
                cell,
                cell_tanh,
            })),
            ng,
        )
    }

    /// Reverse sweep from a `1 × 1` root. A graph can be differentiated once.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::InvalidGraph("backward already ran on this graph".into()));
        }
        if self.value(root).shape() != (1, 1) {
            return Err(Error::InvalidGraph(format!(
                "root has shape {:?}, expected a scalar",
                self.value(root).shape()
            )));
        }
        self.guard()?;
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let is_leaf = matches!(self.nodes[id].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &dy, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[i] = None;
            }
        }
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::NumericGuardTripped("non-finite gradient".into()));
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, id: usize, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let acc = |grads: &mut [Option<Matrix>], v: Var, g: Matrix| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_scaled(&g, 1.0),
                slot @ None => *slot = Some(g),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        let y = &nodes[id].value;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].needs_grad {
                    acc(grads, *a, dy.matmul_t(val(*b)));
                }
                if nodes[b.0].needs_grad {
                    acc(grads, *b, val(*a).t_matmul(dy));
                }
            }
            Op::TMatMul(a, b) => {
                // y = aᵀ b: da = b dyᵀ, db = a dy
                if nodes[a.0].needs_grad {
                    acc(grads, *a, val(*b).matmul_t(dy));
                }
                if nodes[b.0].needs_grad {
                    acc(grads, *b, val(*a).matmul(dy));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.map(|x| -x));
            }
            Op::AddRow(a, bias) => {
                acc(grads, *a, dy.clone());
                if nodes[bias.0].needs_grad {
                    let mut db = Matrix::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (s, x) in db.as_mut_slice().iter_mut().zip(dy.row(r)) {
                            *s += x;
                        }
                    }
                    acc(grads, *bias, db);
                }
            }
            Op::Mul(a, b) => {
                if nodes[a.0].needs_grad {
                    acc(grads, *a, dy.zip_map(val(*b), |g, x| g * x));
                }
                if nodes[b.0].needs_grad {
                    acc(grads, *b, dy.zip_map(val(*a), |g, x| g * x));
                }
            }
            Op::Scale(a, s) => acc(grads, *a, dy.map(|g| g * s)),
            Op::Tanh(a) => acc(grads, *a, dy.zip_map(y, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(grads, *a, dy.zip_map(y, |g, s| g * s * (1.0 - s))),
            Op::Relu(a) => acc(grads, *a, dy.zip_map(y, |g, r| if r > 0.0 { g } else { 0.0 })),
            Op::Dropout(a, mask) => acc(grads, *a, dy.zip_map(mask, |g, m| g * m)),
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for r in 0..dy.rows() {
                    da.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                }
                acc(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if nodes[p.0].needs_grad {
                        acc(grads, *p, dy.slice_cols(off, w));
                    }
                    off += w;
                }
            }
            Op::Reshape(a) => {
                let (r, c) = val(*a).shape();
                acc(grads, *a, dy.clone().reshaped(r, c));
            }
            Op::SumSquares(a) => {
                let g = dy.as_slice()[0];
                acc(grads, *a, val(*a).map(|x| 2.0 * g * x));
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(grads, *a, Matrix::filled(r, c, dy.as_slice()[0]));
            }
            Op::LinComb(terms) => {
                for &(x, c) in terms {
                    if nodes[x.0].needs_grad {
                        acc(grads, x, dy.map(|g| g * c));
                    }
                }
            }
            Op::Lstm(saved) => {
                let (dx, dwih, dwhh, db) = lstm_backward(saved, val(saved.x), val(saved.w_ih), val(saved.w_hh), y, dy);
                acc(grads, saved.x, dx);
                acc(grads, saved.w_ih, dwih);
                acc(grads, saved.w_hh, dwhh);
                acc(grads, saved.bias, db);
            }
        }
    }
}

fn lstm_backward(
    s: &LstmSaved,
    x: &Matrix,
    w_ih: &Matrix,
    w_hh: &Matrix,
    out: &Matrix,
    d_out: &Matrix,
) -> (Matrix, Matrix, Matrix, Matrix) {
    let t_len = out.rows();
    let h = out.cols();
    let mut dz = Matrix::zeros(t_len, 4 * h);
    // h_{t-1} per time step in processing order, for dW_hh.
    let mut h_prev_all = Matrix::zeros(t_len, h);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let prev_of = |t: usize| -> Option<usize> {
        if s.reverse {
            (t + 1 < t_len).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    };
    for step in (0..t_len).rev() {
        let t = if s.reverse { t_len - 1 - step } else { step };
        let prev = prev_of(t);
        if let Some(p) = prev {
            h_prev_all.row_mut(t).copy_from_slice(out.row(p));
        }
        let g = s.gates.row(t);
        let dzr = dz.row_mut(t);
        for j in 0..h {
            let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = s.cell_tanh[(t, j)];
            let c_prev = prev.map_or(0.0, |p| s.cell[(p, j)]);
            let dh = d_out[(t, j)] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
            let d_i = dc * gg;
            let d_g = dc * ig;
            let d_f = dc * c_prev;
            dc_next[j] = dc * fg;
            dzr[j] = d_i * ig * (1.0 - ig);
            dzr[h + j] = d_f * fg * (1.0 - fg);
            dzr[2 * h + j] = d_g * (1.0 - gg * gg);
            dzr[3 * h + j] = d_o * og * (1.0 - og);
        }
        for (k, dhn) in dh_next.iter_mut().enumerate() {
            *dhn = w_hh.row(k).iter().zip(dzr.iter()).map(|(w, d)| w * d).sum();
        }
    }
    let dx = dz.matmul_t(w_ih);
    let dwih = x.t_matmul(&dz);
    let dwhh = h_prev_all.t_matmul(&dz);
    let mut db = Matrix::zeros(1, 4 * h);
    for r in 0..t_len {
        for (s, v) in db.as_mut_slice().iter_mut().zip(dz.row(r)) {
            *s += v;
        }
    }
    (dx, dwih, dwhh, db)
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::TMatMul(..) => "t_matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Relu(..) => "relu",
        Op::Dropout(..) => "dropout",
        Op::SliceCols(..) => "slice_cols",
        Op::ConcatCols(..) => "concat_cols",
        Op::Reshape(..) => "reshape",
        Op::SumSquares(..) => "sum_squares",
        Op::Sum(..) => "sum",
        Op::LinComb(..) => "lin_comb",
        Op::Lstm(..) => "lstm",
    }
}
