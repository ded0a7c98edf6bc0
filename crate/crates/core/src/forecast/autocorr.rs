//! Period-based dependencies: circular lag correlation via FFT and
//! aggregation of the top-k rolled copies of the values.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::tape::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoCorrConfig {
    pub rho: f64,
}

impl Default for AutoCorrConfig {
    fn default() -> Self {
        AutoCorrConfig { rho: 2.0 }
    }
}

impl AutoCorrConfig {
    pub fn top_k(&self, len: usize) -> usize {
        top_k(self.rho, len)
    }
}

/// `max(1, floor(rho * ln len))`, clamped to `len - 1`.
pub fn top_k(rho: f64, len: usize) -> usize {
    let k = (rho * (len as f64).ln()).floor().max(1.0) as usize;
    k.min(len.saturating_sub(1)).max(1)
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse { p.plan_fft_inverse(buf.len()) } else { p.plan_fft_forward(buf.len()) };
        plan.process(buf);
    })
}

fn spectrum(x: impl Iterator<Item = f64>) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.map(|v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf, false);
    buf
}

/// Lag scores summed over channels `cols` and divided by `L * cols.len()`.
fn lag_scores(q: &Mat, k: &Mat, cols: std::ops::Range<usize>) -> Vec<f64> {
    let l = q.rows;
    let n_cols = cols.len();
    let mut acc = vec![Complex64::new(0.0, 0.0); l];
    for c in cols {
        let qs = spectrum((0..l).map(|t| q.at(t, c)));
        let ks = spectrum((0..l).map(|t| k.at(t, c)));
        acc.iter_mut().zip(qs.iter().zip(&ks)).for_each(|(a, (x, y))| *a += x * y.conj());
    }
    fft(&mut acc, true);
    let norm = 1.0 / ((l * l * n_cols) as f64);
    acc.iter().map(|z| z.re * norm).collect()
}

/// `R[tau] = (1/L) * sum_t q[t] * k[(t - tau) mod L]` for every lag, via FFT.
pub fn autocorrelation(q: &[f64], k: &[f64]) -> Vec<f64> {
    assert_eq!(q.len(), k.len(), "autocorrelation needs equal lengths");
    assert!(q.len() >= 2, "autocorrelation needs at least two samples");
    lag_scores(&Mat::column(q), &Mat::column(k), 0..1)
}

/// `roll(x, s)[t] = x[(t - s) mod L]`
pub fn roll(x: &[f64], shift: usize) -> Vec<f64> {
    let l = x.len();
    (0..l).map(|t| x[(t + l - shift % l) % l]).collect()
}

/// Lags kept for one head and their softmax weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSelection {
    pub lags: Vec<usize>,
    pub weights: Vec<f64>,
}

/// The `k` highest-scoring lags (ties to the lower lag) with softmax weights.
pub fn select_lags(scores: &[f64], k: usize) -> LagSelection {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.max(1));
    let m = idx.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = idx.iter().map(|&i| (scores[i] - m).exp()).collect();
    let s: f64 = e.iter().sum();
    LagSelection { weights: e.iter().map(|v| v / s).collect(), lags: idx }
}

/// Single-series aggregation: `sum_i w_i * roll(values, lag_i)`.
pub fn time_delay_aggregate(values: &[f64], scores: &[f64], cfg: &AutoCorrConfig) -> Vec<f64> {
    assert_eq!(values.len(), scores.len());
    let sel = select_lags(scores, cfg.top_k(values.len()));
    let mut out = vec![0.0; values.len()];
    for (&lag, &w) in sel.lags.iter().zip(&sel.weights) {
        out.iter_mut().zip(roll(values, lag)).for_each(|(o, r)| *o += w * r);
    }
    out
}

fn head_cols(d: usize, heads: usize, h: usize) -> std::ops::Range<usize> {
    let dh = d / heads;
    h * dh..(h + 1) * dh
}

/// Multi-head auto-correlation: scores from `q`/`k` per head (channel mean),
/// aggregation of the matching columns of `v`.
pub fn forward(q: &Mat, k: &Mat, v: &Mat, heads: usize, rho: f64) -> (Mat, Vec<LagSelection>) {
    assert!(q.rows == k.rows && k.rows == v.rows, "auto-correlation inputs must share length");
    assert!(q.cols.is_multiple_of(heads) && q.cols == k.cols && k.cols == v.cols);
    let l = q.rows;
    let kk = top_k(rho, l);
    let mut out = Mat::zeros(l, v.cols);
    let mut selection = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = head_cols(q.cols, heads, h);
        let sel = select_lags(&lag_scores(q, k, cols.clone()), kk);
        for (&lag, &w) in sel.lags.iter().zip(&sel.weights) {
            for t in 0..l {
                let src = (t + l - lag) % l;
                for c in cols.clone() {
                    out.data[t * v.cols + c] += w * v.at(src, c);
                }
            }
        }
        selection.push(sel);
    }
    (out, selection)
}

/// Gradients for [`forward`]. Lag selection is held fixed; gradients reach
/// `q`/`k` through the softmax over the selected lag scores.
pub fn backward(q: &Mat, k: &Mat, v: &Mat, heads: usize, selection: &[LagSelection], g: &Mat) -> (Mat, Mat, Mat) {
    let l = q.rows;
    let d = q.cols;
    let mut dq = Mat::zeros(l, d);
    let mut dk = Mat::zeros(l, d);
    let mut dv = Mat::zeros(l, d);
    for (h, sel) in selection.iter().enumerate().take(heads) {
        let cols = head_cols(d, heads, h);
        let mut dw = vec![0.0; sel.lags.len()];
        for (i, (&lag, &w)) in sel.lags.iter().zip(&sel.weights).enumerate() {
            for t in 0..l {
                let src = (t + l - lag) % l;
                for c in cols.clone() {
                    let go = g.at(t, c);
                    dw[i] += go * v.at(src, c);
                    dv.data[src * d + c] += w * go;
                }
            }
        }
        let mean: f64 = sel.weights.iter().zip(&dw).map(|(w, g)| w * g).sum();
        let norm = 1.0 / (l * cols.len()) as f64;
        for (i, &lag) in sel.lags.iter().enumerate() {
            let dr = sel.weights[i] * (dw[i] - mean) * norm;
            if dr == 0.0 {
                continue;
            }
            for t in 0..l {
                let src = (t + l - lag) % l;
                for c in cols.clone() {
                    dq.data[t * d + c] += dr * k.at(src, c);
                    dk.data[src * d + c] += dr * q.at(t, c);
                }
            }
        }
    }
    (dq, dk, dv)
}
