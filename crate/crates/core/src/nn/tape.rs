//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a `1×1` node walks the record in reverse and returns
//! the gradient of that scalar with respect to every node that influences it.
//! The op set is the small collection the toy networks in this crate need:
//! dense algebra, row-wise normalisation and softmax, temporal unfolding for
//! 1D convolutions, and batched 3×3 rotation algebra for forward kinematics.

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Gather { input: Var, index: Vec<Option<usize>> },
    Unfold { input: Var, kernel: usize, stride: usize, pad: usize },
    Sum(Var),
    SumSquares(Var),
    MeanRows(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Array2<f64> },
    Rot6dToMat(Var),
    RotMul(Var, Var),
    RotApply(Var, Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Record of a computation, in evaluation order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &Array2<f64>) -> Array2<f64> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(like.raw_dim()))
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

fn rot6d_forward(r: &[f64]) -> [f64; 9] {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm3(a1).max(1e-12);
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = dot3(b1, a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(u).max(1e-12);
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
    let b3 = cross3(b1, b2);
    let mut out = [0.0; 9];
    for row in 0..3 {
        out[3 * row] = b1[row];
        out[3 * row + 1] = b2[row];
        out[3 * row + 2] = b3[row];
    }
    out
}

fn rot6d_backward(r: &[f64], g: &[f64]) -> [f64; 6] {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = norm3(a1).max(1e-12);
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let d = dot3(b1, a2);
    let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
    let n2 = norm3(u).max(1e-12);
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];

    let mut gb1 = [g[0], g[3], g[6]];
    let mut gb2 = [g[1], g[4], g[7]];
    let gb3 = [g[2], g[5], g[8]];
    // b3 = b1 x b2
    let t1 = cross3(b2, gb3);
    let t2 = cross3(gb3, b1);
    for i in 0..3 {
        gb1[i] += t1[i];
        gb2[i] += t2[i];
    }
    // b2 = u / |u|
    let p = dot3(b2, gb2);
    let gu = [
        (gb2[0] - b2[0] * p) / n2,
        (gb2[1] - b2[1] * p) / n2,
        (gb2[2] - b2[2] * p) / n2,
    ];
    // u = a2 - d b1, d = b1 . a2
    let gd = -dot3(gu, b1);
    let mut ga2 = gu;
    for i in 0..3 {
        gb1[i] += -d * gu[i] + gd * a2[i];
        ga2[i] += gd * b1[i];
    }
    // b1 = a1 / |a1|
    let q = dot3(b1, gb1);
    let ga1 = [
        (gb1[0] - b1[0] * q) / n1,
        (gb1[1] - b1[1] * q) / n1,
        (gb1[2] - b1[2] * q) / n1,
    ];
    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn mat3_mul(a: &[f64], b: &[f64]) -> [f64; 9] {
    let mut c = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            c[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
        }
    }
    c
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input (parameter or constant). Gradients are reported for leaves.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + b` with `b` a `1×cols` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// `a * b` with `b` a `1×cols` row broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(v, Op::Softplus(a))
    }

    /// Row-wise softmax. With `causal`, entries above the diagonal are masked out.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros(x.raw_dim());
        for (i, (row, mut o)) in x.outer_iter().zip(out.outer_iter_mut()).enumerate() {
            let limit = if causal { (i + 1).min(row.len()) } else { row.len() };
            let max = row
                .iter()
                .take(limit)
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for j in 0..limit {
                let e = (row[j] - max).exp();
                o[j] = e;
                sum += e;
            }
            for j in 0..limit {
                o[j] /= sum;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise standardisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        const EPS: f64 = 1e-5;
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut out = Array2::zeros(x.raw_dim());
        let mut inv_std = Vec::with_capacity(x.nrows());
        for (row, mut o) in x.outer_iter().zip(out.outer_iter_mut()) {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std.push(is);
            for (dst, &v) in o.iter_mut().zip(row.iter()) {
                *dst = (v - mean) * is;
            }
        }
        self.push(out, Op::LayerNorm { input: a, inv_std })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Builds a matrix whose row `i` is row `index[i]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<Option<usize>>) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros((index.len(), x.ncols()));
        for (i, src) in index.iter().enumerate() {
            if let Some(r) = *src {
                out.row_mut(i).assign(&x.row(r));
            }
        }
        self.push(out, Op::Gather { input: a, index })
    }

    /// Temporal unfolding (im2col) of a `time×channels` signal for a strided 1D
    /// convolution with zero padding. Output row `o` holds taps
    /// `o*stride - pad .. o*stride - pad + kernel`, tap-major.
    pub fn unfold(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let x = self.value(a);
        let (len, ch) = x.dim();
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let mut out = Array2::zeros((out_len, kernel * ch));
        for o in 0..out_len {
            for k in 0..kernel {
                let src = (o * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    out.slice_mut(s![o, k * ch..(k + 1) * ch])
                        .assign(&x.row(src as usize));
                }
            }
        }
        self.push(
            out,
            Op::Unfold {
                input: a,
                kernel,
                stride,
                pad,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        self.push(v, Op::SumSquares(a))
    }

    /// Mean of squared entries: `sum_squares(a) / a.len()`.
    pub fn mean_squares(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let ss = self.sum_squares(a);
        self.scale(ss, 1.0 / n)
    }

    /// Column means, as a `1×cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x
            .mean_axis(Axis(0))
            .expect("mean_rows on empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len(), "cross_entropy: one target per row");
        let mut probs = Array2::zeros(x.raw_dim());
        let mut total = 0.0;
        for (i, row) in x.outer_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for (j, &v) in row.iter().enumerate() {
                probs[[i, j]] = (v - lse).exp();
            }
            total += lse - row[targets[i]];
        }
        let v = Array2::from_elem((1, 1), total / targets.len().max(1) as f64);
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
        )
    }

    /// Gram-Schmidt decoding of `rows×6` rotation codes into `rows×9` row-major matrices.
    pub fn rot6d_to_mat(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.ncols(), 6);
        let mut out = Array2::zeros((x.nrows(), 9));
        for (row, mut o) in x.outer_iter().zip(out.outer_iter_mut()) {
            let r: Vec<f64> = row.to_vec();
            let m = rot6d_forward(&r);
            for (dst, v) in o.iter_mut().zip(m) {
                *dst = v;
            }
        }
        self.push(out, Op::Rot6dToMat(a))
    }

    /// Row-wise 3×3 matrix product of two `rows×9` matrices.
    pub fn rot_mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let mut out = Array2::zeros(x.raw_dim());
        for ((ra, rb), mut o) in x.outer_iter().zip(y.outer_iter()).zip(out.outer_iter_mut()) {
            let c = mat3_mul(&ra.to_vec(), &rb.to_vec());
            for (dst, v) in o.iter_mut().zip(c) {
                *dst = v;
            }
        }
        self.push(out, Op::RotMul(a, b))
    }

    /// Row-wise product of a `rows×9` matrix with a `rows×3` vector.
    pub fn rot_apply(&mut self, r: Var, v: Var) -> Var {
        let (m, x) = (self.value(r), self.value(v));
        let mut out = Array2::zeros(x.raw_dim());
        for ((rm, rv), mut o) in m.outer_iter().zip(x.outer_iter()).zip(out.outer_iter_mut()) {
            for i in 0..3 {
                o[i] = rm[3 * i] * rv[0] + rm[3 * i + 1] * rv[1] + rm[3 * i + 2] * rv[2];
            }
        }
        self.push(out, Op::RotApply(r, v))
    }

    /// Gradients of the `1×1` node `root` with respect to every contributing node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.raw_dim()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *b, g.clone());
                accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *b, -&g);
                accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, &g * val(*b));
                accumulate(grads, *b, &g * val(*a));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                accumulate(grads, *a, g);
            }
            Op::MulRow(a, row) => {
                let gr = (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                accumulate(grads, *row, gr);
                accumulate(grads, *a, &g * val(*row));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g * *s),
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.dot(&val(*b).t()));
                accumulate(grads, *b, val(*a).t().dot(&g));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.t().to_owned()),
            Op::Relu(a) => {
                let mut d = g;
                d.zip_mut_with(val(*a), |gi, &x| {
                    if x <= 0.0 {
                        *gi = 0.0
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g;
                d.zip_mut_with(&node.value, |gi, &y| *gi *= y * (1.0 - y));
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g;
                d.zip_mut_with(&node.value, |gi, &y| *gi *= 1.0 - y * y);
                accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let mut d = g;
                d.zip_mut_with(val(*a), |gi, &x| *gi *= sigmoid(x));
                accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.raw_dim());
                for ((yr, gr), mut dr) in y.outer_iter().zip(g.outer_iter()).zip(d.outer_iter_mut())
                {
                    let dotp: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..yr.len() {
                        dr[j] = yr[j] * (gr[j] - dotp);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::LayerNorm { input, inv_std } => {
                let y = &node.value;
                let cols = y.ncols() as f64;
                let mut d = Array2::zeros(y.raw_dim());
                for (i, ((yr, gr), mut dr)) in y
                    .outer_iter()
                    .zip(g.outer_iter())
                    .zip(d.outer_iter_mut())
                    .enumerate()
                {
                    let mg = gr.sum() / cols;
                    let mgy: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for j in 0..yr.len() {
                        dr[j] = inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(val(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).ncols();
                    accumulate(grads, *p, g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(val(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = val(*p).nrows();
                    accumulate(grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
            }
            Op::Gather { input, index } => {
                let mut d = Array2::zeros(val(*input).raw_dim());
                for (i, src) in index.iter().enumerate() {
                    if let Some(r) = *src {
                        let mut row = d.row_mut(r);
                        row += &g.row(i);
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::Unfold {
                input,
                kernel,
                stride,
                pad,
            } => {
                let x = val(*input);
                let (len, ch) = x.dim();
                let mut d = Array2::zeros(x.raw_dim());
                for o in 0..g.nrows() {
                    for k in 0..*kernel {
                        let src = (o * stride + k) as isize - *pad as isize;
                        if src >= 0 && (src as usize) < len {
                            let mut row = d.row_mut(src as usize);
                            row += &g.slice(s![o, k * ch..(k + 1) * ch]);
                        }
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::Sum(a) => {
                let s = g[[0, 0]];
                accumulate(grads, *a, Array2::from_elem(val(*a).raw_dim(), s));
            }
            Op::SumSquares(a) => {
                let s = g[[0, 0]];
                accumulate(grads, *a, val(*a) * (2.0 * s));
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let rows = x.nrows() as f64;
                let d = g.broadcast(x.raw_dim()).unwrap().to_owned() / rows;
                accumulate(grads, *a, d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let s = g[[0, 0]] / targets.len().max(1) as f64;
                let mut d = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    d[[i, t]] -= 1.0;
                }
                accumulate(grads, *logits, d * s);
            }
            Op::Rot6dToMat(a) => {
                let x = val(*a);
                let mut d = Array2::zeros(x.raw_dim());
                for ((xr, gr), mut dr) in x.outer_iter().zip(g.outer_iter()).zip(d.outer_iter_mut())
                {
                    let gx = rot6d_backward(&xr.to_vec(), &gr.to_vec());
                    for (dst, v) in dr.iter_mut().zip(gx) {
                        *dst = v;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::RotMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut da = Array2::zeros(x.raw_dim());
                let mut db = Array2::zeros(y.raw_dim());
                for r in 0..x.nrows() {
                    for i in 0..3 {
                        for j in 0..3 {
                            let gij = g[[r, 3 * i + j]];
                            for k in 0..3 {
                                // C_ij = sum_k A_ik B_kj
                                da[[r, 3 * i + k]] += gij * y[[r, 3 * k + j]];
                                db[[r, 3 * k + j]] += gij * x[[r, 3 * i + k]];
                            }
                        }
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::RotApply(m, v) => {
                let (rm, x) = (val(*m), val(*v));
                let mut dm = Array2::zeros(rm.raw_dim());
                let mut dv = Array2::zeros(x.raw_dim());
                for r in 0..x.nrows() {
                    for i in 0..3 {
                        let gi = g[[r, i]];
                        for k in 0..3 {
                            dm[[r, 3 * i + k]] += gi * x[[r, k]];
                            dv[[r, k]] += gi * rm[[r, 3 * i + k]];
                        }
                    }
                }
                accumulate(grads, *m, dm);
                accumulate(grads, *v, dv);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Compares the tape gradient of `f` at `x` with central differences.
    fn check<F>(x: Array2<f64>, f: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = f(&mut tape, v);
        let g = tape.backward(out).get_or_zeros(v, &x);
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let eval = |x: Array2<f64>| {
                let mut t = Tape::new();
                let v = t.leaf(x);
                let o = f(&mut t, v);
                t.scalar(o)
            };
            let num = (eval(xp) - eval(xm)) / (2.0 * h);
            let ana = g.as_slice().unwrap()[idx];
            assert!(
                (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                "entry {idx}: numeric {num} analytic {ana}"
            );
        }
    }

    #[test]
    fn dense_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(&mut rng, 4, 3);
        let bias = random(&mut rng, 1, 3);
        check(random(&mut rng, 5, 4), |t, x| {
            let w = t.leaf(w.clone());
            let b = t.leaf(bias.clone());
            let y = t.matmul(x, w);
            let y = t.add_row(y, b);
            let y = t.layer_norm(y);
            let y = t.tanh(y);
            let z = t.softmax(y, true);
            let z = t.mul_row(z, b);
            t.sum_squares(z)
        });
    }

    #[test]
    fn attention_shaped_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(random(&mut rng, 4, 6), |t, x| {
            let q = t.slice_cols(x, 0, 3);
            let k = t.slice_cols(x, 3, 6);
            let kt = t.transpose(k);
            let s = t.matmul(q, kt);
            let s = t.scale(s, 0.5);
            let p = t.softmax(s, false);
            let o = t.matmul(p, q);
            let o = t.concat_cols(&[o, k]);
            let o = t.sigmoid(o);
            let m = t.mean_rows(o);
            let sp = t.softplus(m);
            t.sum(sp)
        });
    }

    #[test]
    fn unfold_gather_and_cross_entropy_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&mut rng, 9, 5);
        check(random(&mut rng, 7, 3), |t, x| {
            let u = t.unfold(x, 3, 2, 1);
            let w = t.leaf(w.clone());
            let y = t.matmul(u, w);
            let y = t.relu(y);
            let g = t.gather_rows(y, vec![Some(1), None, Some(0), Some(1)]);
            let top = t.slice_rows(g, 0, 2);
            let bottom = t.slice_rows(g, 2, 4);
            let cat = t.concat_rows(&[bottom, top]);
            t.cross_entropy(cat, vec![0, 4, 2, 1])
        });
    }

    #[test]
    fn rotation_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let offset = random(&mut rng, 3, 3);
        check(random(&mut rng, 3, 12), |t, x| {
            let a = t.slice_cols(x, 0, 6);
            let b = t.slice_cols(x, 6, 12);
            let ra = t.rot6d_to_mat(a);
            let rb = t.rot6d_to_mat(b);
            let r = t.rot_mul(ra, rb);
            let o = t.leaf(offset.clone());
            let p = t.rot_apply(r, o);
            let q = t.rot_apply(ra, p);
            let d = t.sub(q, p);
            t.sum_squares(d)
        });
    }

    #[test]
    fn rot6d_to_mat_produces_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let x = t.leaf(random(&mut rng, 10, 6));
        let m = t.rot6d_to_mat(x);
        for row in t.value(m).outer_iter() {
            let r = nalgebra::Matrix3::from_row_slice(row.as_slice().unwrap());
            assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
