use ricsim_core::forecast::{ForecastModel, ModelConfig};

fn tiny() -> ModelConfig {
    ModelConfig { input_len: 16, label_len: 8, d_model: 8, heads: 2, d_ff: 16, ma_kernel: 5, ..Default::default() }
}

#[test]
fn every_parameter_matches_central_differences() {
    let mut model = ForecastModel::new(tiny(), 11).unwrap();
    let x: Vec<f64> = (0..16).map(|t| (t as f64 * 0.7).sin() + 0.1 * t as f64).collect();
    let y = [0.8];
    let (_, grads) = model.loss_and_grad(&x, &y).unwrap();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..model.params.tensors.len() {
        for i in 0..model.params.tensors[p].data.len() {
            let orig = model.params.tensors[p].data[i];
            model.params.tensors[p].data[i] = orig + eps;
            let up = model.loss_and_grad(&x, &y).unwrap().0;
            model.params.tensors[p].data[i] = orig - eps;
            let down = model.loss_and_grad(&x, &y).unwrap().0;
            model.params.tensors[p].data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[p].data[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            assert!(rel <= 1e-4, "{}[{i}]: analytic {analytic:e} numeric {numeric:e}", model.params.names[p]);
            worst = worst.max(rel);
        }
    }
    println!("worst relative error {worst:e} over {} parameters", model.n_params());
}
