//! Measurement pipeline: per-TTI samples to per-frame volume, Savitzky-Golay
//! smoothing and sliding many-to-one windows for the forecaster.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly spaced per-frame traffic volume in Mbps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSeries {
    pub frame_ms: f64,
    pub values: Vec<f64>,
    pub origin_s: f64,
}

impl AggregateSeries {
    pub fn new(frame_ms: f64, values: Vec<f64>) -> Result<Self> {
        let s = AggregateSeries { frame_ms, values, origin_s: 0.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_ms > 0.0) {
            return Err(Error::Pipeline("frame length must be > 0".into()));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Pipeline(format!("value {i} is negative or not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_series_csv(path, &self.values)
    }

    pub fn read_csv(path: &Path, frame_ms: f64) -> Result<Self> {
        Self::new(frame_ms, read_series_csv(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub series: AggregateSeries,
    /// TTIs of an incomplete last frame that were discarded.
    pub truncated_ttis: usize,
}

/// Sums per-TTI Mbit samples into frames and expresses each frame as Mbps.
pub fn aggregate(tti_mbit: &[f64], tti_ms: f64, frame_ms: f64) -> Result<Aggregated> {
    if !(tti_ms > 0.0) || !(frame_ms > 0.0) {
        return Err(Error::Pipeline("TTI and frame length must be > 0".into()));
    }
    let ratio = frame_ms / tti_ms;
    let per_frame = ratio.round();
    if (ratio - per_frame).abs() > 1e-9 * ratio || per_frame < 1.0 {
        return Err(Error::Pipeline(format!("frame {frame_ms} ms is not a multiple of the {tti_ms} ms TTI")));
    }
    let per_frame = per_frame as usize;
    let frame_s = frame_ms / 1000.0;
    let chunks = tti_mbit.chunks_exact(per_frame);
    let truncated_ttis = chunks.remainder().len();
    let values = chunks.map(|c| c.iter().sum::<f64>() / frame_s).collect();
    let series = AggregateSeries { frame_ms, values, origin_s: 0.0 };
    series.validate()?;
    Ok(Aggregated { series, truncated_ttis })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Reflect about the end samples (the end sample itself is not repeated).
    #[default]
    Mirror,
    /// Evaluate the least-squares polynomial of the first/last full window.
    Interp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgFilterConfig {
    pub window: usize,
    pub poly_order: usize,
    #[serde(default)]
    pub edge: EdgeMode,
}

impl Default for SgFilterConfig {
    fn default() -> Self {
        SgFilterConfig { window: 11, poly_order: 3, edge: EdgeMode::Mirror }
    }
}

impl SgFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Pipeline(format!("window {} must be odd and >= 3", self.window)));
        }
        if self.poly_order >= self.window {
            return Err(Error::Pipeline("poly_order must be below window".into()));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.window / 2
    }
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Weights `w` such that `Σ w[j] * y[j]` evaluates, at offset `at` from the
/// window centre, the least-squares polynomial through the window samples.
pub fn savgol_weights(window: usize, poly_order: usize, at: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let scale = half.max(1.0);
    let xs: Vec<f64> = (0..window).map(|j| (j as f64 - half) / scale).collect();
    let m = poly_order + 1;
    // Normal equations G c = V^T y, evaluate p(at) = e^T c with e the monomials of `at`.
    let mut g = vec![vec![0.0; m]; m];
    for &x in &xs {
        for r in 0..m {
            for c in 0..m {
                g[r][c] += x.powi((r + c) as i32);
            }
        }
    }
    let t = at / scale;
    let e: Vec<f64> = (0..m).map(|k| t.powi(k as i32)).collect();
    // G is symmetric, so w = V G^{-1} e.
    let z = solve(g, e);
    xs.iter().map(|&x| (0..m).map(|k| z[k] * x.powi(k as i32)).sum()).collect()
}

/// Centre weights of the filter; their squared norm is the white-noise
/// variance reduction factor.
pub fn savgol_coefficients(cfg: &SgFilterConfig) -> Vec<f64> {
    savgol_weights(cfg.window, cfg.poly_order, 0.0)
}

pub fn smooth_values(values: &[f64], cfg: &SgFilterConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = values.len();
    if n < cfg.window {
        return Err(Error::Pipeline(format!("series of {n} frames is shorter than the window {}", cfg.window)));
    }
    let half = cfg.half();
    let centre = savgol_coefficients(cfg);
    let mut out = vec![0.0; n];
    for i in half..n - half {
        out[i] = centre.iter().zip(&values[i - half..=i + half]).map(|(w, y)| w * y).sum();
    }
    match cfg.edge {
        EdgeMode::Mirror => {
            let at = |k: isize| -> f64 {
                let last = n as isize - 1;
                let k = if k < 0 { -k } else if k > last { 2 * last - k } else { k };
                values[k as usize]
            };
            for i in (0..half).chain(n - half..n) {
                out[i] = centre.iter().enumerate().map(|(j, w)| w * at(i as isize + j as isize - half as isize)).sum();
            }
        }
        EdgeMode::Interp => {
            for i in 0..half {
                let w = savgol_weights(cfg.window, cfg.poly_order, i as f64 - half as f64);
                out[i] = w.iter().zip(&values[..cfg.window]).map(|(a, b)| a * b).sum();
                let w = savgol_weights(cfg.window, cfg.poly_order, half as f64 - i as f64);
                let j = n - 1 - i;
                out[j] = w.iter().rev().zip(values[n - cfg.window..].iter().rev()).map(|(a, b)| a * b).sum();
            }
        }
    }
    Ok(out)
}

/// Smoothed copy of `series`. Negative overshoot is not clamped, so the
/// result may fail [`AggregateSeries::validate`] on spiky inputs.
pub fn smooth(series: &AggregateSeries, cfg: &SgFilterConfig) -> Result<AggregateSeries> {
    Ok(AggregateSeries {
        frame_ms: series.frame_ms,
        values: smooth_values(&series.values, cfg)?,
        origin_s: series.origin_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Pipeline("cannot normalise an empty split".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::Pipeline("training split has zero variance".into()));
        }
        Ok(Normalization { mean, std })
    }

    pub fn identity() -> Self {
        Normalization { mean: 0.0, std: 1.0 }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Stride-1 windows over a normalised series. Pair `p` uses frames
/// `p..p+L` as input and `p+L..p+L+h` as target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub input_len: usize,
    pub horizon: usize,
    pub normalization: Normalization,
    /// Frames belonging to the training split.
    pub train_frames: usize,
    series: Vec<f64>,
}

impl WindowedDataset {
    pub fn n_pairs(&self) -> usize {
        self.series.len() + 1 - self.input_len - self.horizon
    }

    /// Training pairs are those whose target ends inside the training split.
    pub fn n_train(&self) -> usize {
        (self.train_frames + 1).saturating_sub(self.input_len + self.horizon).min(self.n_pairs())
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.n_train()
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.n_train()..self.n_pairs()
    }

    pub fn input(&self, pair: usize) -> &[f64] {
        &self.series[pair..pair + self.input_len]
    }

    pub fn target(&self, pair: usize) -> &[f64] {
        &self.series[pair + self.input_len..pair + self.input_len + self.horizon]
    }

    /// Index in the original series of the first target frame of `pair`.
    pub fn target_frame(&self, pair: usize) -> usize {
        pair + self.input_len
    }

    pub fn normalized_series(&self) -> &[f64] {
        &self.series
    }
}

pub fn make_windows(values: &[f64], input_len: usize, horizon: usize, train_fraction: f64) -> Result<WindowedDataset> {
    if input_len == 0 || horizon == 0 {
        return Err(Error::Pipeline("input length and horizon must be > 0".into()));
    }
    if values.len() < input_len + horizon {
        return Err(Error::Pipeline(format!(
            "series of {} frames is too short for L={input_len}, horizon={horizon}",
            values.len()
        )));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Pipeline("train fraction must be in [0, 1]".into()));
    }
    let train_frames = ((values.len() as f64 * train_fraction).round() as usize).max(1);
    let normalization = Normalization::fit(&values[..train_frames])?;
    Ok(WindowedDataset {
        input_len,
        horizon,
        normalization,
        train_frames,
        series: values.iter().map(|&v| normalization.normalize(v)).collect(),
    })
}

pub fn write_series_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame_index", "mbps"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<(usize, f64)>().enumerate() {
        let (idx, v) = rec?;
        if idx != i {
            return Err(Error::Pipeline(format!("row {i} has frame_index {idx}")));
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct per-point least squares by Gram-Schmidt projection of the window
    /// onto polynomials of degree <= order, evaluated at the centre.
    fn direct_fit(values: &[f64], i: usize, window: usize, order: usize) -> f64 {
        let half = window / 2;
        let y = &values[i - half..=i + half];
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for k in 0..=order {
            let mut q: Vec<f64> = (0..window).map(|j| (j as f64 - half as f64).powi(k as i32)).collect();
            for b in &basis {
                let d: f64 = q.iter().zip(b).map(|(x, y)| x * y).sum();
                q.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.iter_mut().for_each(|x| *x /= n);
            basis.push(q);
        }
        basis.iter().map(|q| q.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() * q[half]).sum()
    }

    #[test]
    fn zero_ttis_give_zero_series() {
        let a = aggregate(&vec![0.0; 5000], 1.0, 1000.0).unwrap();
        assert_eq!(a.series.values, vec![0.0; 5]);
        assert_eq!(a.truncated_ttis, 0);
    }

    #[test]
    fn thousand_ttis_of_point_two_is_200_mbps() {
        let a = aggregate(&vec![0.2; 1000], 1.0, 1000.0).unwrap();
        assert!((a.series.values[0] - 200.0).abs() < 1e-9);
    }

    #[test]
    fn ragged_tail_is_reported() {
        let a = aggregate(&vec![0.1; 2500], 1.0, 1000.0).unwrap();
        assert_eq!(a.series.len(), 2);
        assert_eq!(a.truncated_ttis, 500);
        assert!(aggregate(&[1.0], 1.0, 1500.5).is_err());
    }

    #[test]
    fn sg_coefficients_match_known_table() {
        // Classic 5-point quadratic smoothing weights (-3, 12, 17, 12, -3) / 35.
        let c = savgol_weights(5, 2, 0.0);
        let expect = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in c.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let vrf: f64 = savgol_coefficients(&SgFilterConfig::default()).iter().map(|c| c * c).sum();
        assert!((vrf - 89.0 / 429.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_unchanged() {
        for edge in [EdgeMode::Mirror, EdgeMode::Interp] {
            let cfg = SgFilterConfig { edge, ..Default::default() };
            let out = smooth_values(&vec![4.25; 40], &cfg).unwrap();
            assert!(out.iter().all(|v| (v - 4.25).abs() < 1e-12));
        }
    }

    #[test]
    fn short_series_rejected() {
        assert!(smooth_values(&[1.0; 5], &SgFilterConfig::default()).is_err());
        assert!(SgFilterConfig { window: 4, poly_order: 1, edge: EdgeMode::Mirror }.validate().is_err());
        assert!(SgFilterConfig { window: 5, poly_order: 5, edge: EdgeMode::Mirror }.validate().is_err());
    }

    #[test]
    fn cubic_reproduced_everywhere_with_interp_edges() {
        let cfg = SgFilterConfig { edge: EdgeMode::Interp, ..Default::default() };
        let p = |x: f64| 0.5 - 1.5 * x + 0.02 * x * x - 0.001 * x * x * x;
        let v: Vec<f64> = (0..60).map(|i| p(i as f64)).collect();
        let out = smooth_values(&v, &cfg).unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn mirror_and_interp_agree_inside() {
        let v: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let m = smooth_values(&v, &SgFilterConfig::default()).unwrap();
        let i = smooth_values(&v, &SgFilterConfig { edge: EdgeMode::Interp, ..Default::default() }).unwrap();
        assert_eq!(m[5..45], i[5..45]);
        for k in 5..45 {
            assert!((m[k] - direct_fit(&v, k, 11, 3)).abs() < 1e-12);
        }
    }

    #[test]
    fn window_counts() {
        let v: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(make_windows(&v, 9, 1, 1.0).unwrap().n_pairs(), 1);
        let d = make_windows(&v, 4, 2, 0.5).unwrap();
        assert_eq!(d.n_pairs(), 10 - 4 - 2 + 1);
        assert!(make_windows(&v, 10, 1, 1.0).is_err());
        assert!(make_windows(&[3.0; 10], 2, 1, 0.5).is_err());
    }

    #[test]
    fn split_is_chronological_and_stats_from_train_only() {
        let v: Vec<f64> = (0..100).map(|i| if i < 50 { (i % 5) as f64 } else { 1000.0 }).collect();
        let d = make_windows(&v, 8, 1, 0.5).unwrap();
        assert_eq!(d.normalization, Normalization::fit(&v[..50]).unwrap());
        for p in d.train_indices() {
            assert!(d.target_frame(p) + d.horizon <= d.train_frames);
        }
        assert_eq!(d.test_indices().start, d.train_indices().end);
        assert_eq!(d.test_indices().end, d.n_pairs());
    }

    #[test]
    fn series_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let v = vec![1.5, 0.0, 298.125, 1e-7];
        write_series_csv(&path, &v).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().next(), Some("frame_index,mbps"));
        assert_eq!(read_series_csv(&path).unwrap(), v);
    }

    proptest! {
        #[test]
        fn aggregation_is_linear_and_additive(
            a in prop::collection::vec(0.0f64..10.0, 40),
            b in prop::collection::vec(0.0f64..10.0, 20),
            k in 0.0f64..50.0,
        ) {
            let agg = |x: &[f64]| aggregate(x, 1.0, 10.0).unwrap().series.values;
            let scaled: Vec<f64> = a.iter().map(|v| v * k).collect();
            for (x, y) in agg(&scaled).iter().zip(agg(&a)) {
                prop_assert!((x - k * y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            let mut parts = agg(&a);
            parts.extend(agg(&b));
            prop_assert_eq!(agg(&joined), parts);
        }

        #[test]
        fn polynomials_reproduced_inside(coef in prop::collection::vec(-2.0f64..2.0, 4), n in 11usize..80) {
            let v: Vec<f64> = (0..n).map(|i| {
                let x = i as f64 / n as f64;
                coef[0] + coef[1] * x + coef[2] * x * x + coef[3] * x * x * x
            }).collect();
            let out = smooth_values(&v, &SgFilterConfig::default()).unwrap();
            for i in 5..n - 5 {
                prop_assert!((out[i] - v[i]).abs() <= 1e-9);
            }
        }

        #[test]
        fn constant_flanks_preserve_mean(
            inner in prop::collection::vec(-5.0f64..5.0, 1..60),
            c in -3.0f64..3.0,
        ) {
            let mut v = vec![c; 6];
            v.extend(&inner);
            v.extend(vec![c; 6]);
            let out = smooth_values(&v, &SgFilterConfig::default()).unwrap();
            let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
            prop_assert!((mean(&out) - mean(&v)).abs() <= 1e-9);
        }

        #[test]
        fn normalisation_round_trip(v in prop::collection::vec(-1e3f64..1e3, 2..50), x in -1e4f64..1e4) {
            prop_assume!(Normalization::fit(&v).is_ok());
            let n = Normalization::fit(&v).unwrap();
            let back = n.denormalize(n.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn windows_never_leak_targets(len in 6usize..80, l in 1usize..5, h in 1usize..3) {
            let v: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let d = make_windows(&v, l, h, 0.7).unwrap();
            prop_assert_eq!(d.n_pairs(), len - l - h + 1);
            for p in 0..d.n_pairs() {
                let last_in = d.input(p).last().unwrap();
                let first_t = d.target(p)[0];
                prop_assert!(first_t > *last_in);
                prop_assert_eq!(d.target_frame(p), p + l);
            }
        }
    }
}
