//! Reverse-mode differentiation over batched matrix operations.
//!
//! Every graph node is a matrix whose rows are MRF nodes (or a single row for
//! parameters), so one tape entry covers a whole layer. Values are kept for the
//! backward sweep; operations optionally tally multiply-add counts and wall
//! time per [`Stage`].

use std::sync::Arc;
use std::time::Instant;

use crate::graph::Adjacency;
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Processing stage that operation counts are attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Initialization,
    Aggregation,
    MlpTheta,
    UpdateGru,
    UpdateLinear,
    Readout,
    Amp,
    Other,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Initialization,
        Stage::Aggregation,
        Stage::MlpTheta,
        Stage::UpdateGru,
        Stage::UpdateLinear,
        Stage::Readout,
        Stage::Amp,
        Stage::Other,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Per-stage multiply-add and wall-clock tallies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageCounters {
    pub flops: [u64; 8],
    pub nanos: [u64; 8],
}

impl StageCounters {
    pub fn flops(&self, s: Stage) -> u64 {
        self.flops[s.slot()]
    }

    pub fn seconds(&self, s: Stage) -> f64 {
        self.nanos[s.slot()] as f64 * 1e-9
    }

    pub fn merge(&mut self, other: &StageCounters) {
        for i in 0..8 {
            self.flops[i] += other.flops[i];
            self.nanos[i] += other.nanos[i];
        }
    }
}

enum Op<T> {
    Input,
    Param(usize),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddConst(Var),
    Scale(Var, T),
    OneMinus(Var),
    Recip { x: Var, eps: T },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Column(Var, usize),
    Spmm { mat: Arc<CsrMatrix<T>>, x: Var },
    GraphSum { graph: Arc<Adjacency>, u: Var, e: Var },
    Moments { p: Var, support: Arc<Vec<T>> },
    SquaredError { x: Var, target: Arc<Vec<T>> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    counters: Option<(StageCounters, Instant)>,
    stage: Stage,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), counters: None, stage: Stage::Other }
    }

    /// A tape that records per-stage operation counts and timings.
    pub fn instrumented() -> Self {
        Self { nodes: Vec::new(), counters: Some((StageCounters::default(), Instant::now())), stage: Stage::Other }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_stage(&mut self, stage: Stage) {
        if let Some((c, last)) = &mut self.counters {
            let now = Instant::now();
            c.nanos[self.stage.slot()] += now.duration_since(*last).as_nanos() as u64;
            *last = now;
        }
        self.stage = stage;
    }

    /// Closes the running stage timer and returns the tallies.
    pub fn counters(&mut self) -> Option<StageCounters> {
        let stage = self.stage;
        self.set_stage(stage);
        self.counters.as_ref().map(|(c, _)| c.clone())
    }

    fn count(&mut self, flops: usize) {
        if let Some((c, _)) = &mut self.counters {
            c.flops[self.stage.slot()] += flops as u64;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Input | Op::Param(_) => vec![],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::AddConst(a)
            | Op::Scale(a, _)
            | Op::OneMinus(a)
            | Op::Recip { x: a, .. }
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Column(a, _)
            | Op::Spmm { x: a, .. }
            | Op::Moments { p: a, .. }
            | Op::SquaredError { x: a, .. } => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::GraphSum { u, e, .. } => vec![*u, *e],
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: usize, t: Tensor<T>) -> Var {
        self.push(t, Op::Param(id))
    }

    /// `X Wᵀ + b` with `X: n×in`, `W: out×in`, `b: 1×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols, wv.cols, "linear: input width {} vs weight width {}", xv.cols, wv.cols);
        let (n, din, dout) = (xv.rows, xv.cols, wv.rows);
        let mut out = vec![T::zero(); n * dout];
        let bias = b.map(|b| {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, dout), "linear: bias shape");
            bv.data.clone()
        });
        for r in 0..n {
            let xr = xv.row(r);
            for o in 0..dout {
                let wr = wv.row(o);
                let mut acc = bias.as_ref().map_or(T::zero(), |b| b[o]);
                for i in 0..din {
                    acc += xr[i] * wr[i];
                }
                out[r * dout + o] = acc;
            }
        }
        self.count(n * din * dout);
        self.push(Tensor::from_vec(n, dout, out), Op::Linear { x, w, b })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(av.rows, av.cols, data);
        self.count(t.len());
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × k` row to every row of an `n × k` matrix.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((1, av.cols), bv.shape(), "add_bias shape mismatch");
        let k = av.cols;
        let data = av.data.iter().enumerate().map(|(i, &x)| x + bv.data[i % k]).collect();
        let t = Tensor::from_vec(av.rows, k, data);
        self.count(t.len());
        self.push(t, Op::AddBias(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.count(t.len());
        self.push(t, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.count(t.len());
        self.push(t, Op::Scale(a, c))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| T::one() - x);
        self.count(t.len());
        self.push(t, Op::OneMinus(a))
    }

    /// `1 / max(x, eps)`.
    pub fn recip(&mut self, x: Var, eps: T) -> Var {
        let t = self.value(x).map(|v| T::one() / v.max(eps));
        self.count(t.len());
        self.push(t, Op::Recip { x, eps })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        self.push(t, Op::Tanh(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len());
        for r in 0..av.rows {
            let row = av.row(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let ex: Vec<T> = row.iter().map(|&x| (x - mx).exp()).collect();
            let s: T = ex.iter().copied().sum();
            data.extend(ex.into_iter().map(|e| e / s));
        }
        let t = Tensor::from_vec(av.rows, av.cols, data);
        self.push(t, Op::Softmax(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat row mismatch");
                data.extend_from_slice(pv.row(r));
            }
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::Concat(parts.to_vec()))
    }

    pub fn column(&mut self, a: Var, c: usize) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|r| av.at(r, c)).collect();
        self.push(Tensor::column(data), Op::Column(a, c))
    }

    /// Constant sparse matrix times a variable `n × k` matrix.
    pub fn spmm(&mut self, mat: &Arc<CsrMatrix<T>>, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(mat.ncols(), xv.rows, "spmm: inner dimension mismatch");
        let k = xv.cols;
        let data = mat.mul_dense(&xv.data, k);
        self.count(mat.nnz() * k);
        self.push(Tensor::from_vec(mat.nrows(), k, data), Op::Spmm { mat: Arc::clone(mat), x })
    }

    /// Sum of messages `[u_i, u_j, e_ij]` over neighbors `j` of every node `i`.
    ///
    /// `u` is `n × k` and `e` holds one attribute per directed edge in adjacency
    /// order. The result is `n × (2k + 1)`: `[deg_i u_i, Σ_j u_j, Σ_j e_ij]`.
    /// Counted as `(deg_i − 1)(k + 1)` additions per node since the `u_i` block
    /// is shared by every incoming message.
    pub fn graph_sum(&mut self, graph: &Arc<Adjacency>, u: Var, e: Var) -> Var {
        let (uv, ev) = (self.value(u), self.value(e));
        let n = graph.nodes();
        assert_eq!(uv.rows, n, "graph_sum: node count");
        assert_eq!(ev.rows, graph.edges(), "graph_sum: edge count");
        let k = uv.cols;
        let w = 2 * k + 1;
        let mut out = vec![T::zero(); n * w];
        let mut adds = 0usize;
        for i in 0..n {
            let nb = graph.neighbors(i);
            let deg = T::lit(nb.len() as f64);
            let dst = &mut out[i * w..(i + 1) * w];
            for (d, &s) in dst[..k].iter_mut().zip(uv.row(i)) {
                *d = deg * s;
            }
            let base = graph.offset(i);
            for (slot, &j) in nb.iter().enumerate() {
                for (d, &s) in dst[k..2 * k].iter_mut().zip(uv.row(j)) {
                    *d += s;
                }
                dst[2 * k] += ev.data[base + slot];
            }
            adds += nb.len().saturating_sub(1) * (k + 1);
        }
        self.count(adds);
        self.push(Tensor::from_vec(n, w, out), Op::GraphSum { graph: Arc::clone(graph), u, e })
    }

    /// Mean and variance of each row's distribution `p` over `support`: `n × 2`.
    pub fn moments(&mut self, p: Var, support: &Arc<Vec<T>>) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.cols, support.len(), "moments: support size");
        let mut data = Vec::with_capacity(pv.rows * 2);
        for r in 0..pv.rows {
            let row = pv.row(r);
            let mean: T = row.iter().zip(support.iter()).map(|(&q, &s)| q * s).sum();
            let var: T = row.iter().zip(support.iter()).map(|(&q, &s)| q * (s - mean) * (s - mean)).sum();
            data.push(mean);
            data.push(var);
        }
        self.push(Tensor::from_vec(pv.rows, 2, data), Op::Moments { p, support: Arc::clone(support) })
    }

    /// `Σ (x − target)²` as a `1 × 1` tensor.
    pub fn squared_error(&mut self, x: Var, target: &Arc<Vec<T>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), target.len(), "squared_error length");
        let s: T = xv.data.iter().zip(target.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        self.push(Tensor::scalar(s), Op::SquaredError { x, target: Arc::clone(target) })
    }

    /// Reverse sweep from `out` seeded with `seed` (same shape as `out`).
    pub fn backward(&self, out: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(self.value(out).shape(), seed.shape(), "backward seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, din, dout) = (xv.rows, xv.cols, wv.rows);
                if self.nodes[x.0].needs_grad {
                    let mut gx = vec![T::zero(); n * din];
                    for r in 0..n {
                        let gr = g.row(r);
                        let dst = &mut gx[r * din..(r + 1) * din];
                        for o in 0..dout {
                            let go = gr[o];
                            if go == T::zero() {
                                continue;
                            }
                            for (d, &wi) in dst.iter_mut().zip(wv.row(o)) {
                                *d += go * wi;
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(n, din, gx));
                }
                if self.nodes[w.0].needs_grad {
                    let mut gw = vec![T::zero(); dout * din];
                    for r in 0..n {
                        let xr = xv.row(r);
                        for o in 0..dout {
                            let go = g.data[r * dout + o];
                            if go == T::zero() {
                                continue;
                            }
                            for (d, &xi) in gw[o * din..(o + 1) * din].iter_mut().zip(xr) {
                                *d += go * xi;
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::from_vec(dout, din, gw));
                }
                if let Some(b) = b {
                    let mut gb = vec![T::zero(); dout];
                    for r in 0..n {
                        for (d, &v) in gb.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::row_vector(gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let d = g.data.iter().zip(&bv.data).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(g.rows, g.cols, d));
                }
                if self.nodes[b.0].needs_grad {
                    let d = g.data.iter().zip(&av.data).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.rows, g.cols, d));
                }
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let mut gb = vec![T::zero(); g.cols];
                for r in 0..g.rows {
                    for (d, &v) in gb.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *b, Tensor::row_vector(gb));
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::OneMinus(a) => self.accumulate(grads, *a, g.map(|v| -v)),
            Op::Recip { x, eps } => {
                let xv = self.value(*x);
                let d = g
                    .data
                    .iter()
                    .zip(&y.data)
                    .zip(&xv.data)
                    .map(|((&gv, &yv), &xval)| if xval > *eps { -gv * yv * yv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.rows, g.cols, d));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = g.data.iter().zip(&av.data).map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() }).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows, g.cols, d));
            }
            Op::Sigmoid(a) => {
                let d = g.data.iter().zip(&y.data).map(|(&gv, &s)| gv * s * (T::one() - s)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows, g.cols, d));
            }
            Op::Tanh(a) => {
                let d = g.data.iter().zip(&y.data).map(|(&gv, &t)| gv * (T::one() - t * t)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows, g.cols, d));
            }
            Op::Softmax(a) => {
                let mut d = Vec::with_capacity(g.len());
                for r in 0..g.rows {
                    let (gr, pr) = (g.row(r), y.row(r));
                    let dot: T = gr.iter().zip(pr).map(|(&x, &p)| x * p).sum();
                    d.extend(gr.iter().zip(pr).map(|(&x, &p)| p * (x - dot)));
                }
                self.accumulate(grads, *a, Tensor::from_vec(g.rows, g.cols, d));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(g.rows * cols);
                        for r in 0..g.rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, Tensor::from_vec(g.rows, cols, d));
                    }
                    offset += cols;
                }
            }
            Op::Column(a, c) => {
                let av = self.value(*a);
                let mut d = Tensor::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    d.data[r * av.cols + c] = g.data[r];
                }
                self.accumulate(grads, *a, d);
            }
            Op::Spmm { mat, x } => {
                let xv = self.value(*x);
                let mut d = vec![T::zero(); xv.len()];
                mat.mul_transpose_acc(&g.data, xv.cols, &mut d);
                self.accumulate(grads, *x, Tensor::from_vec(xv.rows, xv.cols, d));
            }
            Op::GraphSum { graph, u, e } => {
                let uv = self.value(*u);
                let k = uv.cols;
                let w = 2 * k + 1;
                let n = graph.nodes();
                let mut gu = vec![T::zero(); n * k];
                let mut ge = vec![T::zero(); graph.edges()];
                for i in 0..n {
                    let gi = &g.data[i * w..(i + 1) * w];
                    let nb = graph.neighbors(i);
                    let deg = T::lit(nb.len() as f64);
                    for (d, &v) in gu[i * k..(i + 1) * k].iter_mut().zip(&gi[..k]) {
                        *d += deg * v;
                    }
                    let base = graph.offset(i);
                    for (slot, &j) in nb.iter().enumerate() {
                        for (d, &v) in gu[j * k..(j + 1) * k].iter_mut().zip(&gi[k..2 * k]) {
                            *d += v;
                        }
                        ge[base + slot] = gi[2 * k];
                    }
                }
                self.accumulate(grads, *u, Tensor::from_vec(n, k, gu));
                self.accumulate(grads, *e, Tensor::column(ge));
            }
            Op::Moments { p, support } => {
                let pv = self.value(*p);
                let two = T::lit(2.0);
                let mut d = Vec::with_capacity(pv.len());
                for r in 0..pv.rows {
                    let (gm, gv) = (g.at(r, 0), g.at(r, 1));
                    let mean = y.at(r, 0);
                    let row = pv.row(r);
                    let mass: T = row.iter().copied().sum();
                    // v = Σ p_s (s − m)², m = Σ p_s s  ⇒  ∂v/∂p_s = (s − m)² − 2 s (m − m Σp)
                    let centered = mean - mean * mass;
                    d.extend(support.iter().map(|&s| gm * s + gv * ((s - mean) * (s - mean) - two * s * centered)));
                }
                self.accumulate(grads, *p, Tensor::from_vec(pv.rows, pv.cols, d));
            }
            Op::SquaredError { x, target } => {
                let xv = self.value(*x);
                let two = T::lit(2.0) * g.data[0];
                let d = xv.data.iter().zip(target.iter()).map(|(&a, &b)| two * (a - b)).collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.rows, xv.cols, d));
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any recorded variable, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Adds parameter gradients into `acc`, indexed by parameter id.
    pub fn accumulate_params(&self, acc: &mut [Tensor<T>]) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                acc[id].add_assign(g);
            }
        }
    }
}
