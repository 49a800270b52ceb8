//! Reverse-mode gradient tape over dense matrices.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the nodes in reverse order and accumulates adjoints. Only the
//! handful of operations needed by the encoders, attention and decoder are
//! provided.

use crate::tensor::{Matrix, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a (n×k) + b (1×k)` with `b` broadcast across rows.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// `a (n×k) ∘ w (n×1)` with `w` broadcast across columns.
    ScaleRows(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Softmax over all entries of a column vector.
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SelectRow(Var, usize),
    SumRows(Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "broadcast operand must be a row vector");
        assert_eq!(av.cols(), rv.cols(), "add_row width mismatch");
        let mut out = av.clone();
        let cols = out.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = *v + rv.as_slice()[i % cols];
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Var {
        let (av, wv) = (self.value(a), self.value(weights));
        assert_eq!(wv.shape(), (av.rows(), 1), "scale_rows weight shape");
        let mut out = av.clone();
        let cols = out.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = *v * wv.as_slice()[i / cols];
        }
        self.push(out, Op::ScaleRows(a, weights))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols(), 1, "softmax expects a column vector");
        let out = Matrix::from_vec(av.rows(), 1, softmax(av.as_slice()));
        self.push(out, Op::Softmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hcat(&values);
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::vcat(&values);
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice_cols(start, end);
        self.push(out, Op::SliceCols(a, start, end))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Var {
        let out = self.value(a).select_rows(&[row]);
        self.push(out, Op::SelectRow(a, row))
    }

    /// Column sums as a `1×k` row vector (left-multiplication by a row of ones).
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, &x) in out.as_mut_slice().iter_mut().zip(av.row(r)) {
                *o = *o + x;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Propagate the given output adjoints back through the tape.
    pub fn backward(&self, seeds: &[(Var, Matrix<T>)]) -> Gradients<T> {
        let mut adj: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(*v).shape(), "seed shape mismatch");
            accumulate(&mut adj, *v, g.clone());
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o = *o + x;
                        }
                    }
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *row, gr);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::ScaleRows(a, w) => {
                    let av = self.value(*a);
                    let wv = self.value(*w);
                    let cols = g.cols();
                    let mut ga = g.clone();
                    let mut gw = Matrix::zeros(wv.rows(), 1);
                    for r in 0..g.rows() {
                        let weight = wv.get(r, 0);
                        let mut acc = T::zero();
                        for c in 0..cols {
                            acc = acc + g.get(r, c) * av.get(r, c);
                            ga.set(r, c, g.get(r, c) * weight);
                        }
                        gw.set(r, 0, acc);
                    }
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *w, gw);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (T::one() - y * y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (T::one() - y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: T = g
                        .as_slice()
                        .iter()
                        .zip(y.as_slice())
                        .map(|(&gi, &yi)| gi * yi)
                        .sum();
                    let ga = g.zip_map(y, |gi, yi| yi * (gi - dot));
                    accumulate(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut adj, p, g.slice_cols(start, start + w));
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        let idx: Vec<usize> = (start..start + h).collect();
                        accumulate(&mut adj, p, g.select_rows(&idx));
                        start += h;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        for c in *start..*end {
                            ga.set(r, c, g.get(r, c - start));
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SelectRow(a, row) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for c in 0..av.cols() {
                        ga.set(*row, c, g.get(0, c));
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SumRows(a) => {
                    let rows = self.value(*a).rows();
                    let parts = vec![&g; rows];
                    accumulate(&mut adj, *a, Matrix::vcat(&parts));
                }
            }
        }
        Gradients { adj }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints of leaf nodes after a backward pass.
pub struct Gradients<T> {
    adj: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` does not influence the seeds.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.adj[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.adj[v.0].take()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
