use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ForecastModel;
use super::tape::Mat;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::pipeline::WindowedDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Random subset of training pairs visited per epoch; 0 visits all.
    pub max_pairs_per_epoch: usize,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_pairs_per_epoch: 0,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::Forecast("learning rate must be >= 0 and batch size > 0".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimiser state over a list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(like: &[Mat], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let z: Vec<Mat> = like.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
        Adam { m: z.clone(), v: z, t: 0, lr, beta1, beta2, eps }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &[Mat]) -> f64 {
    grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-sample losses and the mean gradient over `pairs`. Per-sample
/// gradients are summed in index order whichever execution path ran them.
pub fn batch_gradient(
    model: &ForecastModel,
    data: &WindowedDataset,
    pairs: &[usize],
    mode: Parallelism,
) -> Result<(Vec<f64>, Vec<Mat>)> {
    let per_sample = par::map_slice(mode, pairs, |&p| model.loss_and_grad(data.input(p), data.target(p)));
    let mut grads = model.params.zeros_like();
    let mut losses = Vec::with_capacity(pairs.len());
    for r in per_sample {
        let (l, g) = r?;
        losses.push(l);
        grads.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b));
    }
    let inv = 1.0 / pairs.len() as f64;
    grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= inv));
    Ok((losses, grads))
}

/// Mini-batch MSE training on the training pairs of `data`. Records the mean
/// loss of each epoch in `model.history`.
pub fn train(model: &mut ForecastModel, data: &WindowedDataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.input_len != model.config.input_len || data.horizon != model.config.horizon {
        return Err(Error::Forecast("dataset windows do not match the model config".into()));
    }
    let mut order: Vec<usize> = data.train_indices().collect();
    if order.is_empty() {
        return Err(Error::Forecast("no training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params.tensors, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut initial: Option<f64> = None;
    let first_pair = order[0];
    let mut pair_loss = vec![0.0; order.len()];
    let take = if cfg.max_pairs_per_epoch == 0 { order.len() } else { cfg.max_pairs_per_epoch.min(order.len()) };
    model.normalization = data.normalization;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order[..take].chunks(cfg.batch_size) {
            let (losses, mut grads) = batch_gradient(model, data, batch, cfg.parallelism)?;
            let loss = losses.iter().sum::<f64>() / losses.len() as f64;
            let first = *initial.get_or_insert(loss);
            if !loss.is_finite() || loss > 1e3 * first.max(f64::MIN_POSITIVE) {
                return Err(Error::Divergence { epoch, loss, initial: first });
            }
            for (&p, l) in batch.iter().zip(losses) {
                pair_loss[p - first_pair] = l;
            }
            let norm = global_norm(&grads);
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
            }
            adam.step(&mut model.params.tensors, &grads);
            if let Some(i) = model.params.tensors.iter().position(|t| !t.is_finite()) {
                return Err(Error::NonFinite { layer: model.params.names[i].clone() });
            }
        }
        // Summed in pair order so the value does not depend on the shuffle.
        let mut seen = order[..take].to_vec();
        seen.sort_unstable();
        let mean = seen.iter().map(|&p| pair_loss[p - first_pair]).sum::<f64>() / take as f64;
        log::debug!("forecaster epoch {epoch}: loss {mean:.6}");
        model.history.push(mean);
    }
    model.trained = true;
    Ok(())
}

/// Mean squared error in normalised units over the given pairs.
pub fn evaluate_mse(model: &ForecastModel, data: &WindowedDataset, pairs: impl Iterator<Item = usize>, mode: Parallelism) -> Result<f64> {
    let idx: Vec<usize> = pairs.collect();
    let errs = par::map_slice(mode, &idx, |&p| {
        model.forward(data.input(p)).map(|y| {
            y.iter().zip(data.target(p)).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
        })
    });
    let mut s = 0.0;
    for e in errs {
        s += e?;
    }
    Ok(s / idx.len().max(1) as f64)
}

/// One-step predictions in Mbps for each pair, with the matching actual values.
pub fn predict_pairs(
    model: &ForecastModel,
    data: &WindowedDataset,
    pairs: impl Iterator<Item = usize>,
    mode: Parallelism,
) -> Result<Vec<(f64, f64)>> {
    let idx: Vec<usize> = pairs.collect();
    let norm = data.normalization;
    par::map_slice(mode, &idx, |&p| {
        model.forward(data.input(p)).map(|y| (norm.denormalize(y[0]), norm.denormalize(data.target(p)[0])))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::model::ModelConfig;
    use crate::pipeline::make_windows;

    fn tiny() -> ModelConfig {
        ModelConfig { input_len: 16, label_len: 8, d_model: 8, heads: 2, d_ff: 16, ma_kernel: 5, ..Default::default() }
    }

    fn sine(n: usize, period: f64) -> Vec<f64> {
        (0..n).map(|t| (2.0 * std::f64::consts::PI * t as f64 / period).sin()).collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = make_windows(&sine(80, 8.0), 16, 1, 0.8).unwrap();
        let mut m = ForecastModel::new(tiny(), 1).unwrap();
        let before = m.params.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..Default::default() };
        train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m.params, before);
        assert!(m.history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_reproducible_across_paths() {
        let data = make_windows(&sine(80, 8.0), 16, 1, 0.8).unwrap();
        let run = |mode| {
            let mut m = ForecastModel::new(tiny(), 4).unwrap();
            let cfg = TrainConfig { learning_rate: 1e-3, epochs: 2, batch_size: 8, parallelism: mode, ..Default::default() };
            train(&mut m, &data, &cfg).unwrap();
            m
        };
        let a = run(Parallelism::Sequential);
        let b = run(Parallelism::Parallel);
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn learns_a_noiseless_sinusoid() {
        let data = make_windows(&sine(200, 8.0), 16, 1, 1.0).unwrap();
        let mut m = ForecastModel::new(tiny(), 2).unwrap();
        let cfg = TrainConfig { learning_rate: 3e-3, epochs: 200, batch_size: 32, ..Default::default() };
        train(&mut m, &data, &cfg).unwrap();
        let last = *m.history.last().unwrap();
        assert!(last <= 1e-3, "final train mse {last}");
    }

    #[test]
    fn divergence_is_reported() {
        let data = make_windows(&sine(80, 8.0), 16, 1, 0.8).unwrap();
        let mut m = ForecastModel::new(tiny(), 1).unwrap();
        let cfg = TrainConfig { learning_rate: 1e6, grad_clip: 0.0, epochs: 50, batch_size: 4, ..Default::default() };
        match train(&mut m, &data, &cfg) {
            Err(Error::Divergence { .. }) | Err(Error::NonFinite { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn adam_single_step_moves_by_lr() {
        let mut p = vec![Mat::from_vec(1, 2, vec![1.0, -1.0])];
        let g = vec![Mat::from_vec(1, 2, vec![0.5, -2.0])];
        let mut a = Adam::new(&p, 0.1, 0.9, 0.999, 0.0);
        a.step(&mut p, &g);
        assert!((p[0].data[0] - 0.9).abs() < 1e-12);
        assert!((p[0].data[1] + 0.9).abs() < 1e-12);
    }
}
