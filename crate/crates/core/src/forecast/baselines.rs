use crate::error::{Error, Result};

/// Value one season before the next frame.
pub fn baseline_seasonal_naive(series: &[f64], season: usize) -> Result<f64> {
    if season == 0 || series.len() < season {
        return Err(Error::Forecast(format!("seasonal naive needs {season} frames of history, got {}", series.len())));
    }
    Ok(series[series.len() - season])
}

/// Mean of the last `window` frames.
pub fn baseline_moving_average(series: &[f64], window: usize) -> Result<f64> {
    if window == 0 || series.len() < window {
        return Err(Error::Forecast(format!("moving average needs {window} frames of history, got {}", series.len())));
    }
    Ok(series[series.len() - window..].iter().sum::<f64>() / window as f64)
}

/// One-step forecasts for targets `start..series.len()`, each from the frames before it.
pub fn rolling_predictions(series: &[f64], start: usize, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    (start..series.len()).map(|t| f(&series[..t])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series() {
        let s = [7.0; 10];
        assert_eq!(baseline_seasonal_naive(&s, 4).unwrap(), 7.0);
        assert_eq!(baseline_moving_average(&s, 4).unwrap(), 7.0);
    }

    #[test]
    fn season_one_is_persistence() {
        let s = [1.0, 5.0, 2.0];
        assert_eq!(baseline_seasonal_naive(&s, 1).unwrap(), 2.0);
    }

    #[test]
    fn periodic_series_has_zero_residual() {
        let p = 24;
        let s: Vec<f64> = (0..200).map(|t| 100.0 + (2.0 * std::f64::consts::PI * t as f64 / p as f64).sin()).collect();
        let preds = rolling_predictions(&s, p, |h| baseline_seasonal_naive(h, p)).unwrap();
        for (y, yhat) in s[p..].iter().zip(&preds) {
            assert!((y - yhat).abs() < 1e-12);
        }
    }

    #[test]
    fn short_history_errors() {
        assert!(baseline_seasonal_naive(&[1.0; 3], 4).is_err());
        assert!(baseline_moving_average(&[1.0; 3], 0).is_err());
    }
}
