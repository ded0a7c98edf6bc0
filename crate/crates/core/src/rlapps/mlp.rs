//! Fully connected Q-network with ReLU hidden layers and hand-written backprop.

use rand::Rng;

use crate::forecast::tape::Mat;

/// Parameters are stored as `[W0, b0, W1, b1, ...]`, with `W` shaped
/// `fan_in x fan_out` and `b` a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: Vec<Mat>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<f64>>();
            params.push(Mat::from_vec(w[0], w[1], draw(w[0] * w[1])));
            params.push(Mat::from_vec(1, w[1], draw(w[1])));
        }
        Mlp { params }
    }

    pub fn from_params(params: Vec<Mat>) -> Self {
        Mlp { params }
    }

    pub fn input_dim(&self) -> usize {
        self.params[0].rows
    }

    pub fn output_dim(&self) -> usize {
        self.params[self.params.len() - 1].cols
    }

    fn n_layers(&self) -> usize {
        self.params.len() / 2
    }

    fn affine(&self, layer: usize, x: &Mat) -> Mat {
        let mut z = x.matmul(&self.params[2 * layer]);
        let b = &self.params[2 * layer + 1];
        for r in 0..z.rows {
            z.data[r * z.cols..(r + 1) * z.cols].iter_mut().zip(&b.data).for_each(|(v, bb)| *v += bb);
        }
        z
    }

    /// Activations of every layer, input first and raw outputs last.
    fn activations(&self, x: &Mat) -> Vec<Mat> {
        let mut acts = vec![x.clone()];
        for l in 0..self.n_layers() {
            let mut z = self.affine(l, &acts[l]);
            if l + 1 < self.n_layers() {
                z.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Batch forward pass: one row per state.
    pub fn forward(&self, x: &Mat) -> Mat {
        self.activations(x).pop().expect("network has at least one layer")
    }

    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.forward(&Mat::from_vec(1, state.len(), state.to_vec())).data
    }

    /// Mean squared error between `Q(s_i, a_i)` and `targets[i]`, and its
    /// gradient with respect to every parameter.
    pub fn td_loss_and_grad(&self, states: &Mat, actions: &[usize], targets: &[f64]) -> (f64, Vec<Mat>) {
        let acts = self.activations(states);
        let q = &acts[acts.len() - 1];
        let n = actions.len() as f64;
        let mut delta = Mat::zeros(q.rows, q.cols);
        let mut loss = 0.0;
        for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let e = q.at(i, a) - y;
            loss += e * e / n;
            delta.data[i * q.cols + a] = 2.0 * e / n;
        }
        let mut grads = vec![Mat::zeros(0, 0); self.params.len()];
        for l in (0..self.n_layers()).rev() {
            grads[2 * l] = acts[l].t_matmul(&delta);
            let mut db = Mat::zeros(1, delta.cols);
            for r in 0..delta.rows {
                db.data.iter_mut().zip(delta.row(r)).for_each(|(s, v)| *s += v);
            }
            grads[2 * l + 1] = db;
            if l > 0 {
                let mut prev = delta.matmul_t(&self.params[2 * l]);
                prev.data.iter_mut().zip(&acts[l].data).for_each(|(g, a)| {
                    if *a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = prev;
            }
        }
        (loss, grads)
    }
}

/// Index of the largest entry among allowed ones; ties go to the lowest index.
pub fn argmax(values: &[f64], allowed: Option<&[bool]>) -> usize {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if allowed.is_some_and(|m| !m[i]) {
            continue;
        }
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best.expect("at least one allowed action")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_ties_and_masks() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0], None), 1);
        assert_eq!(argmax(&[5.0, 5.0, 1.0], None), 0);
        assert_eq!(argmax(&[5.0, 5.0, 1.0], Some(&[false, true, true])), 1);
    }

    #[test]
    fn shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(9, &[64, 64], 3, &mut rng);
        assert_eq!(m.params.len(), 6);
        assert_eq!((m.input_dim(), m.output_dim()), (9, 3));
        assert_eq!(m.q_values(&[0.1; 9]).len(), 3);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::new(4, &[5, 6], 3, &mut rng);
        let x = Mat::from_vec(3, 4, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect());
        let actions = [0, 2, 1];
        let targets = [0.5, -0.2, 1.0];
        let (_, g) = m.td_loss_and_grad(&x, &actions, &targets);
        let eps = 1e-6;
        for p in 0..m.params.len() {
            for i in 0..m.params[p].data.len() {
                let mut hi = m.clone();
                hi.params[p].data[i] += eps;
                let mut lo = m.clone();
                lo.params[p].data[i] -= eps;
                let fd = (hi.td_loss_and_grad(&x, &actions, &targets).0 - lo.td_loss_and_grad(&x, &actions, &targets).0) / (2.0 * eps);
                let err = (fd - g[p].data[i]).abs() / fd.abs().max(g[p].data[i].abs()).max(1e-6);
                assert!(err < 1e-5, "param {p}[{i}]: fd {fd} analytic {}", g[p].data[i]);
            }
        }
    }
}
