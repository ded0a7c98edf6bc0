use serde::{Deserialize, Serialize};

use super::tape::{moving_average, Mat, Padding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub seasonal: Vec<f64>,
    pub trend: Vec<f64>,
}

/// Moving-average trend with end-replication padding; seasonal is the remainder.
pub fn decompose(x: &[f64], ma_kernel: usize) -> Result<Decomposition> {
    decompose_with(x, ma_kernel, Padding::Replicate)
}

pub fn decompose_with(x: &[f64], ma_kernel: usize, padding: Padding) -> Result<Decomposition> {
    if ma_kernel == 0 || ma_kernel.is_multiple_of(2) {
        return Err(Error::Forecast(format!("moving-average kernel {ma_kernel} must be odd")));
    }
    if ma_kernel > x.len() {
        return Err(Error::Forecast(format!("kernel {ma_kernel} exceeds series length {}", x.len())));
    }
    let trend = moving_average(&Mat::column(x), ma_kernel, padding).data;
    let seasonal = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
    Ok(Decomposition { seasonal, trend })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_has_no_seasonal() {
        let d = decompose(&[2.5; 30], 25).unwrap();
        assert!(d.trend.iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert!(d.seasonal.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn sinusoid_with_kernel_period_has_flat_trend() {
        let k = 25;
        let x: Vec<f64> = (0..200).map(|t| (2.0 * std::f64::consts::PI * t as f64 / k as f64).sin()).collect();
        let d = decompose(&x, k).unwrap();
        for t in k / 2..x.len() - k / 2 {
            assert!(d.trend[t].abs() <= 1e-9);
            assert!((d.seasonal[t] - x[t]).abs() <= 1e-9);
        }
    }

    #[test]
    fn bad_kernels() {
        assert!(decompose(&[1.0; 10], 11).is_err());
        assert!(decompose(&[1.0; 10], 4).is_err());
    }

    proptest! {
        #[test]
        fn parts_sum_to_input(x in prop::collection::vec(-1e3f64..1e3, 8..200), k in 0usize..4) {
            let kernel = [1, 3, 5, 7][k];
            let d = decompose(&x, kernel).unwrap();
            for i in 0..x.len() {
                prop_assert!((d.seasonal[i] + d.trend[i] - x[i]).abs() <= 1e-12);
            }
        }
    }
}
