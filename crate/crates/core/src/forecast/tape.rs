//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! Rows are time steps and columns are channels throughout. A [`Tape`] is
//! built per sample, evaluated eagerly, then walked backwards once.

use serde::{Deserialize, Serialize};

use super::autocorr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape {rows}x{cols} does not match {} values", data.len());
        Mat { rows, cols, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Mat::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "matmul {}x{} by {}x{}", self.rows, self.cols, b.rows, b.cols);
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    o.iter_mut().zip(b.row(k)).for_each(|(x, y)| *x += a * y);
                }
            }
        }
        out
    }

    /// self^T * b
    pub(crate) fn t_matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows);
        let mut out = Mat::zeros(self.cols, b.cols);
        for r in 0..self.rows {
            let br = b.row(r);
            for i in 0..self.cols {
                let a = self.data[r * self.cols + i];
                if a != 0.0 {
                    out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(br).for_each(|(x, y)| *x += a * y);
                }
            }
        }
        out
    }

    /// self * b^T
    pub(crate) fn matmul_t(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols);
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = a.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Repeat the end rows.
    Replicate,
    Circular,
}

impl Padding {
    fn index(self, t: isize, len: usize) -> usize {
        let n = len as isize;
        match self {
            Padding::Replicate => t.clamp(0, n - 1) as usize,
            Padding::Circular => t.rem_euclid(n) as usize,
        }
    }
}

/// Row-wise moving average with length-preserving padding.
pub fn moving_average(x: &Mat, kernel: usize, padding: Padding) -> Mat {
    let half = (kernel / 2) as isize;
    let mut out = Mat::zeros(x.rows, x.cols);
    let inv = 1.0 / kernel as f64;
    for t in 0..x.rows as isize {
        let o = &mut out.data[t as usize * x.cols..(t as usize + 1) * x.cols];
        for j in -half..=half {
            let src = x.row(padding.index(t + j, x.rows));
            o.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        o.iter_mut().for_each(|a| *a *= inv);
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Gelu(Var),
    MovingAvg { x: Var, kernel: usize, padding: Padding },
    AutoCorr { q: Var, k: Var, v: Var, heads: usize, selection: Vec<autocorr::LagSelection> },
    SliceRows { x: Var, start: usize },
    ConcatRows(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, value: &Mat) -> Var {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, self.value(a).cols));
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            v.data[r * v.cols..(r + 1) * v.cols].iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
        self.push(v, Op::AddBias(a, bias))
    }

    /// `x * w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let m = self.matmul(x, w);
        self.add_bias(m, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().zip(&self.value(b).data).for_each(|(x, y)| *x -= y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = gelu(*x));
        self.push(v, Op::Gelu(a))
    }

    pub fn moving_avg(&mut self, x: Var, kernel: usize, padding: Padding) -> Var {
        let v = moving_average(self.value(x), kernel, padding);
        self.push(v, Op::MovingAvg { x, kernel, padding })
    }

    /// Series decomposition: `(seasonal, trend)` with `seasonal = x - trend`.
    pub fn decompose(&mut self, x: Var, kernel: usize, padding: Padding) -> (Var, Var) {
        let trend = self.moving_avg(x, kernel, padding);
        let seasonal = self.sub(x, trend);
        debug_assert!({
            let (xs, ss, ts) = (self.value(x), self.value(seasonal), self.value(trend));
            xs.data.iter().zip(&ss.data).zip(&ts.data).all(|((x, s), t)| !(s + t).is_finite() || (s + t - x).abs() <= 1e-12 * (1.0 + x.abs() + t.abs()))
        });
        (seasonal, trend)
    }

    pub fn autocorr(&mut self, q: Var, k: Var, v: Var, heads: usize, rho: f64) -> Var {
        let (out, selection) = autocorr::forward(self.value(q), self.value(k), self.value(v), heads, rho);
        self.push(out, Op::AutoCorr { q, k, v, heads, selection })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.value(x);
        let v = Mat::from_vec(len, s.cols, s.data[start * s.cols..(start + len) * s.cols].to_vec());
        self.push(v, Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.cols);
        let mut data = x.data.clone();
        data.extend_from_slice(&y.data);
        let v = Mat::from_vec(x.rows + y.rows, x.cols, data);
        self.push(v, Op::ConcatRows(a, b))
    }

    /// Back-propagates `seed` from `out` and adds parameter gradients into `param_grads`.
    pub fn backward(&self, out: Var, seed: Mat, param_grads: &mut [Mat]) {
        let mut grads: Vec<Option<Mat>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        let acc = |grads: &mut Vec<Option<Mat>>, v: Var, g: Mat| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(p) => param_grads[*p].add_assign(&g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddBias(a, b) => {
                    let mut db = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        db.data.iter_mut().zip(g.row(r)).for_each(|(x, y)| *x += y);
                    }
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.data.iter_mut().for_each(|x| *x = -*x);
                    acc(&mut grads, *b, neg);
                    acc(&mut grads, *a, g);
                }
                Op::Gelu(a) => {
                    let mut d = g;
                    d.data.iter_mut().zip(&self.value(*a).data).for_each(|(x, y)| *x *= gelu_grad(*y));
                    acc(&mut grads, *a, d);
                }
                Op::MovingAvg { x, kernel, padding } => {
                    let half = (*kernel / 2) as isize;
                    let inv = 1.0 / *kernel as f64;
                    let mut d = Mat::zeros(g.rows, g.cols);
                    for t in 0..g.rows as isize {
                        let gr = g.row(t as usize);
                        for j in -half..=half {
                            let src = padding.index(t + j, g.rows);
                            d.data[src * g.cols..(src + 1) * g.cols]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(a, b)| *a += b * inv);
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::AutoCorr { q, k, v, heads, selection } => {
                    let (dq, dk, dv) =
                        autocorr::backward(self.value(*q), self.value(*k), self.value(*v), *heads, selection, &g);
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::SliceRows { x, start } => {
                    let src = self.value(*x);
                    let mut d = Mat::zeros(src.rows, src.cols);
                    d.data[start * src.cols..start * src.cols + g.len()].copy_from_slice(&g.data);
                    acc(&mut grads, *x, d);
                }
                Op::ConcatRows(a, b) => {
                    let n = self.value(*a).len();
                    let (ga, gb) = g.data.split_at(n);
                    let (ra, rb) = (self.value(*a).rows, self.value(*b).rows);
                    acc(&mut grads, *a, Mat::from_vec(ra, g.cols, ga.to_vec()));
                    acc(&mut grads, *b, Mat::from_vec(rb, g.cols, gb.to_vec()));
                }
            }
        }
    }
}
