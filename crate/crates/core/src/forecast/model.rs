use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autocorr::AutoCorrConfig;
use super::decomp::decompose_with;
use super::tape::{Mat, Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::pipeline::Normalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_len: usize,
    /// Known frames handed to the decoder ahead of the forecast slots.
    pub label_len: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ma_kernel: usize,
    pub autocorr: AutoCorrConfig,
    pub positional_embedding: bool,
    pub padding: Padding,
    pub trend_init: TrendInit,
}

/// Initial decoder trend for the forecast slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendInit {
    /// Mean of the input window.
    Mean,
    /// Last value of the input's extracted trend.
    #[default]
    Last,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 96,
            label_len: 48,
            horizon: 1,
            d_model: 32,
            heads: 2,
            d_ff: 64,
            encoder_layers: 2,
            decoder_layers: 1,
            ma_kernel: 25,
            autocorr: AutoCorrConfig::default(),
            positional_embedding: true,
            padding: Padding::Replicate,
            trend_init: TrendInit::default(),
        }
    }
}

impl ModelConfig {
    pub fn decoder_len(&self) -> usize {
        self.label_len + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Forecast(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return err("d_model must be a positive multiple of heads");
        }
        if self.input_len < 2 || self.horizon == 0 {
            return err("input_len must be >= 2 and horizon >= 1");
        }
        if self.label_len == 0 || self.decoder_len() > self.input_len {
            return err("label_len + horizon must be in 2..=input_len");
        }
        if self.ma_kernel.is_multiple_of(2) || self.ma_kernel > self.decoder_len() {
            return err("ma_kernel must be odd and no longer than label_len + horizon");
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.d_ff == 0 {
            return err("layer counts and d_ff must be > 0");
        }
        if !(self.autocorr.rho > 0.0) {
            return err("rho must be > 0");
        }
        Ok(())
    }
}

/// Parameter tensors in a fixed order, addressed by index from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Mat>,
}

impl ParamStore {
    fn add(&mut self, name: String, m: Mat) -> usize {
        self.names.push(name);
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AutoCorrBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EncoderLayer {
    attn: AutoCorrBlock,
    ff: FeedForward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DecoderLayer {
    self_attn: AutoCorrBlock,
    cross_attn: AutoCorrBlock,
    ff: FeedForward,
    trend: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    enc_embed: Linear,
    enc_pos: Option<usize>,
    dec_embed: Linear,
    dec_pos: Option<usize>,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> usize {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.store.add(name, Mat::from_vec(rows, cols, data))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(format!("{name}.w"), fan_in, fan_out, bound);
        let b = self.uniform(format!("{name}.b"), 1, fan_out, bound);
        Linear { w, b }
    }

    fn autocorr(&mut self, name: &str, d: usize) -> AutoCorrBlock {
        AutoCorrBlock {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward { up: self.linear(&format!("{name}.up"), d, d_ff), down: self.linear(&format!("{name}.down"), d_ff, d) }
    }
}

/// Decomposition transformer for one-step volume forecasting.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub normalization: Normalization,
    pub trained: bool,
    pub history: Vec<f64>,
    layout: Layout,
}

impl ForecastModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore { names: Vec::new(), tensors: Vec::new() };
        let layout = {
            let mut init = Init { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
            let d = config.d_model;
            let enc_embed = init.linear("enc.embed", 1, d);
            let enc_pos = config.positional_embedding.then(|| init.uniform("enc.pos".into(), config.input_len, d, 0.1));
            let dec_embed = init.linear("dec.embed", 1, d);
            let dec_pos =
                config.positional_embedding.then(|| init.uniform("dec.pos".into(), config.decoder_len(), d, 0.1));
            let encoder = (0..config.encoder_layers)
                .map(|i| EncoderLayer {
                    attn: init.autocorr(&format!("enc{i}.ac"), d),
                    ff: init.ff(&format!("enc{i}.ff"), d, config.d_ff),
                })
                .collect();
            let decoder = (0..config.decoder_layers)
                .map(|i| DecoderLayer {
                    self_attn: init.autocorr(&format!("dec{i}.self"), d),
                    cross_attn: init.autocorr(&format!("dec{i}.cross"), d),
                    ff: init.ff(&format!("dec{i}.ff"), d, config.d_ff),
                    trend: init.linear(&format!("dec{i}.trend"), d, 1),
                })
                .collect();
            let head = init.linear("head", d, 1);
            Layout { enc_embed, enc_pos, dec_embed, dec_pos, encoder, decoder, head }
        };
        Ok(ForecastModel { config, params, normalization: Normalization::identity(), trained: false, history: Vec::new(), layout })
    }

    /// Rebuilds a model from stored tensors, which must match the layout of `config`.
    pub fn from_parts(config: ModelConfig, tensors: Vec<Mat>, normalization: Normalization, history: Vec<f64>) -> Result<Self> {
        let mut m = ForecastModel::new(config, 0)?;
        if tensors.len() != m.params.tensors.len()
            || tensors.iter().zip(&m.params.tensors).any(|(a, b)| (a.rows, a.cols) != (b.rows, b.cols))
        {
            return Err(Error::Checkpoint("tensor shapes do not match the model config".into()));
        }
        m.params.tensors = tensors;
        m.normalization = normalization;
        m.history = history;
        m.trained = true;
        Ok(m)
    }

    pub fn n_params(&self) -> usize {
        self.params.count()
    }

    /// Zeroes the seasonal head and the decoder trend projections.
    pub fn zero_output_head(&mut self) {
        let mut zero = |l: Linear| {
            for i in [l.w, l.b] {
                self.params.tensors[i].data.iter_mut().for_each(|v| *v = 0.0);
            }
        };
        zero(self.layout.head);
        for d in self.layout.decoder.clone() {
            zero(d.trend);
        }
    }

    fn p(&self, tape: &mut Tape, i: usize) -> Var {
        tape.param(i, &self.params.tensors[i])
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Linear) -> Var {
        let w = self.p(tape, l.w);
        let b = self.p(tape, l.b);
        tape.linear(x, w, b)
    }

    fn autocorr_block(&self, tape: &mut Tape, x: Var, kv: Var, blk: &AutoCorrBlock) -> Var {
        let q = self.linear(tape, x, blk.q);
        let k = self.linear(tape, kv, blk.k);
        let v = self.linear(tape, kv, blk.v);
        let a = tape.autocorr(q, k, v, self.config.heads, self.config.autocorr.rho);
        self.linear(tape, a, blk.o)
    }

    fn feed_forward(&self, tape: &mut Tape, x: Var, ff: &FeedForward) -> Var {
        let h = self.linear(tape, x, ff.up);
        let h = tape.gelu(h);
        self.linear(tape, h, ff.down)
    }

    fn embed(&self, tape: &mut Tape, x: Var, l: Linear, pos: Option<usize>) -> Var {
        let e = self.linear(tape, x, l);
        match pos {
            Some(p) => {
                let p = self.p(tape, p);
                tape.add(e, p)
            }
            None => e,
        }
    }

    fn check(tape: &Tape, v: Var, layer: &str) -> Result<()> {
        if tape.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { layer: layer.to_string() })
        }
    }

    fn encoder(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let mut h = self.embed(tape, x, self.layout.enc_embed, self.layout.enc_pos);
        Self::check(tape, h, "encoder embedding")?;
        for (i, layer) in self.layout.encoder.iter().enumerate() {
            let a = self.autocorr_block(tape, h, h, &layer.attn);
            let r = tape.add(h, a);
            let (s, _) = tape.decompose(r, cfg.ma_kernel, cfg.padding);
            let f = self.feed_forward(tape, s, &layer.ff);
            let r = tape.add(s, f);
            let (s, _) = tape.decompose(r, cfg.ma_kernel, cfg.padding);
            Self::check(tape, s, &format!("encoder layer {i}"))?;
            h = s;
        }
        Ok(h)
    }

    /// Records the full forward pass for a normalised window and returns the
    /// node holding the `horizon` predictions.
    pub fn build(&self, tape: &mut Tape, window: &[f64]) -> Result<Var> {
        let cfg = &self.config;
        if window.len() != cfg.input_len {
            return Err(Error::Forecast(format!("window of {} frames, model expects {}", window.len(), cfg.input_len)));
        }
        let l = cfg.input_len;
        let ld = cfg.decoder_len();
        let init = decompose_with(window, cfg.ma_kernel, cfg.padding)?;
        let mean = window.iter().sum::<f64>() / l as f64;
        let mut seasonal_init = init.seasonal[l - cfg.label_len..].to_vec();
        seasonal_init.resize(ld, 0.0);
        let fill = match cfg.trend_init {
            TrendInit::Mean => mean,
            TrendInit::Last => init.trend[l - 1],
        };
        let mut trend_init = init.trend[l - cfg.label_len..].to_vec();
        trend_init.resize(ld, fill);

        let x = tape.leaf(Mat::column(window));
        let enc = self.encoder(tape, x)?;
        let memory = tape.slice_rows(enc, l - ld, ld);

        let dec_x = tape.leaf(Mat::column(&seasonal_init));
        let mut s = self.embed(tape, dec_x, self.layout.dec_embed, self.layout.dec_pos);
        let mut trend = tape.leaf(Mat::column(&trend_init));
        for (i, layer) in self.layout.decoder.iter().enumerate() {
            let a = self.autocorr_block(tape, s, s, &layer.self_attn);
            let r = tape.add(s, a);
            let (s1, t1) = tape.decompose(r, cfg.ma_kernel, cfg.padding);
            let c = self.autocorr_block(tape, s1, memory, &layer.cross_attn);
            let r = tape.add(s1, c);
            let (s2, t2) = tape.decompose(r, cfg.ma_kernel, cfg.padding);
            let f = self.feed_forward(tape, s2, &layer.ff);
            let r = tape.add(s2, f);
            let (s3, t3) = tape.decompose(r, cfg.ma_kernel, cfg.padding);
            let t = tape.add(t1, t2);
            let t = tape.add(t, t3);
            let t = self.linear(tape, t, layer.trend);
            trend = tape.add(trend, t);
            Self::check(tape, s3, &format!("decoder layer {i}"))?;
            s = s3;
        }
        let seasonal = self.linear(tape, s, self.layout.head);
        let out = tape.add(trend, seasonal);
        let pred = tape.slice_rows(out, ld - cfg.horizon, cfg.horizon);
        Self::check(tape, pred, "output head")?;
        Ok(pred)
    }

    /// Prediction in normalised units.
    pub fn forward(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.build(&mut tape, window)?;
        Ok(tape.value(out).data.clone())
    }

    /// Encoder output for a normalised window.
    pub fn encode(&self, window: &[f64]) -> Result<Mat> {
        let mut tape = Tape::new();
        let x = tape.leaf(Mat::column(window));
        let e = self.encoder(&mut tape, x)?;
        Ok(tape.value(e).clone())
    }

    /// Squared error summed over the horizon, and its parameter gradients.
    pub fn loss_and_grad(&self, window: &[f64], target: &[f64]) -> Result<(f64, Vec<Mat>)> {
        let mut tape = Tape::new();
        let out = self.build(&mut tape, window)?;
        let pred = tape.value(out);
        let diff: Vec<f64> = pred.data.iter().zip(target).map(|(p, y)| p - y).collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
        let scale = 2.0 / diff.len() as f64;
        let seed = Mat::from_vec(pred.rows, 1, diff.iter().map(|d| d * scale).collect());
        let mut grads = self.params.zeros_like();
        tape.backward(out, seed, &mut grads);
        Ok((loss, grads))
    }

    /// Next-frame forecast in Mbps from the most recent frames.
    pub fn predict_next(&self, recent: &[f64]) -> Result<f64> {
        if !self.trained {
            return Err(Error::Forecast("model has not been trained".into()));
        }
        let l = self.config.input_len;
        if recent.len() < l {
            return Err(Error::Forecast(format!("need {l} frames of history, got {}", recent.len())));
        }
        let window: Vec<f64> = recent[recent.len() - l..].iter().map(|&v| self.normalization.normalize(v)).collect();
        Ok(self.normalization.denormalize(self.forward(&window)?[0]))
    }
}
