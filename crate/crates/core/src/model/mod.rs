//! Temporal transformer classifier over single-pixel multivariate timeseries.
//!
//! Pipeline: layer norm → two conv1d+ReLU blocks → layer norm → sinusoidal
//! positional encoding → post-norm transformer encoder layers → layer norm →
//! max-pool over time (the feature tap) → linear classification head.

mod checkpoint;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

/// Number of conv+ReLU blocks in the feature extractor.
pub const EXTRACTOR_BLOCKS: usize = 2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub timepoints: usize,
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    pub dropout: f64,
    pub num_classes: usize,
    /// Kernel width of the extractor convolutions (odd, same padding).
    pub conv_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 28,
            timepoints: 8,
            feature_dim: 64,
            encoder_layers: 2,
            heads: 2,
            feedforward_dim: 256,
            dropout: 0.1,
            num_classes: 25,
            conv_kernel: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_channels == 0 || self.timepoints == 0 || self.feature_dim == 0 {
            return bad("input_channels, timepoints and feature_dim must be positive".into());
        }
        if self.heads == 0 || self.feature_dim % self.heads != 0 {
            return bad(format!(
                "feature_dim {} not divisible by heads {}",
                self.feature_dim, self.heads
            ));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.conv_kernel == 0 || self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.feedforward_dim == 0 {
            return bad("feedforward_dim must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.heads
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Ones,
    Zeros,
    /// U(−1/√fan_in, 1/√fan_in)
    FanIn(usize),
}

/// Canonical (name, shape, init) list; forward consumes parameters in this order.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let c = config.input_channels;
    let f = config.feature_dim;
    let k = config.conv_kernel;
    let ff = config.feedforward_dim;
    let mut out = Vec::new();
    let norm = |out: &mut Vec<_>, name: &str, width: usize| {
        out.push((format!("{name}.gain"), vec![width], Init::Ones));
        out.push((format!("{name}.bias"), vec![width], Init::Zeros));
    };
    norm(&mut out, "input_norm", c);
    let mut c_in = c;
    for b in 0..EXTRACTOR_BLOCKS {
        out.push((format!("extractor.{b}.weight"), vec![k, c_in, f], Init::FanIn(k * c_in)));
        out.push((format!("extractor.{b}.bias"), vec![f], Init::Zeros));
        c_in = f;
    }
    norm(&mut out, "feature_norm", f);
    for l in 0..config.encoder_layers {
        for proj in ["query", "key", "value", "out"] {
            out.push((format!("encoder.{l}.attn.{proj}.weight"), vec![f, f], Init::FanIn(f)));
            out.push((format!("encoder.{l}.attn.{proj}.bias"), vec![f], Init::Zeros));
        }
        norm(&mut out, &format!("encoder.{l}.norm1"), f);
        out.push((format!("encoder.{l}.ff1.weight"), vec![f, ff], Init::FanIn(f)));
        out.push((format!("encoder.{l}.ff1.bias"), vec![ff], Init::Zeros));
        out.push((format!("encoder.{l}.ff2.weight"), vec![ff, f], Init::FanIn(ff)));
        out.push((format!("encoder.{l}.ff2.bias"), vec![f], Init::Zeros));
        norm(&mut out, &format!("encoder.{l}.norm2"), f);
    }
    norm(&mut out, "final_norm", f);
    out.push(("head.weight".into(), vec![f, config.num_classes], Init::FanIn(f)));
    out.push(("head.bias".into(), vec![config.num_classes], Init::Zeros));
    out
}

/// Every learnable tensor of the classifier, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, init) in layout(config) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Ones => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    Ok(ModelParams {
        config: config.clone(),
        names,
        tensors,
    })
}

impl ModelParams {
    /// Assemble from tensors in canonical order, checking names and shapes.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != named.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "parameter mismatch: expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
            t.check_finite(got_name)?;
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(ModelParams {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Record every parameter as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.var(t.clone())).collect()
    }

    /// Record every parameter as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Inference without gradients. Returns `(logits [m,K], features [m,f])`.
    pub fn forward(&self, batch: &Tensor, train: bool, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let params = self.bind_constant(&mut tape);
        let input = tape.constant(batch.clone());
        let out = forward(&mut tape, &self.config, &params, input, train, rng)?;
        Ok((tape.value(out.logits).clone(), tape.value(out.features).clone()))
    }
}

impl ModelParams {
    /// Eval-mode inference (dropout off).
    pub fn infer(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        // dropout is disabled, so the generator is never drawn from
        self.forward(batch, false, &mut ChaCha8Rng::seed_from_u64(0))
    }
}

/// Fixed sinusoidal encoding, `[time, width]`.
pub fn positional_encoding(time: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; time * width];
    for t in 0..time {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / width as f64);
            data[t * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![time, width], data).expect("shape matches data")
}

/// Outputs of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    /// Max-pooled representation, `[m, feature_dim]`.
    pub features: Var,
    /// One attention node per encoder layer.
    pub attention: Vec<Var>,
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_broadcast(y, b)
}

/// Record the classifier on `tape`. `params` must come from
/// [`ModelParams::bind`] (or the same canonical order).
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &[Var],
    input: Var,
    train: bool,
    rng: &mut impl Rng,
) -> Result<ForwardVars> {
    let expected = layout(config).len();
    if params.len() != expected {
        return Err(Error::Invalid(format!(
            "expected {expected} parameter variables, got {}",
            params.len()
        )));
    }
    let shape = tape.shape(input).to_vec();
    let (m, time, channels) = match shape[..] {
        [m, t, c] if t == config.timepoints && c == config.input_channels => (m, t, c),
        _ => {
            return Err(Error::Shape {
                op: "model forward",
                lhs: shape,
                rhs: vec![0, config.timepoints, config.input_channels],
            })
        }
    };
    debug_assert!(channels > 0);
    let f = config.feature_dim;
    let mut p = params.iter().copied();
    let mut next = || p.next().expect("parameter count checked above");

    let (g, b) = (next(), next());
    let mut x = tape.layer_norm(input, Some(g), Some(b), LAYER_NORM_EPS)?;
    for _ in 0..EXTRACTOR_BLOCKS {
        let (w, bias) = (next(), next());
        x = tape.conv1d(x, w, bias)?;
        x = tape.relu(x)?;
    }
    let (g, b) = (next(), next());
    x = tape.layer_norm(x, Some(g), Some(b), LAYER_NORM_EPS)?;
    let pe = tape.constant(positional_encoding(time, f));
    x = tape.add_broadcast(x, pe)?;

    let mut flat = tape.reshape(x, vec![m * time, f])?;
    let mut attention = Vec::with_capacity(config.encoder_layers);
    for _ in 0..config.encoder_layers {
        let (wq, bq, wk, bk, wv, bv, wo, bo) = (next(), next(), next(), next(), next(), next(), next(), next());
        let q = linear(tape, flat, wq, bq)?;
        let k = linear(tape, flat, wk, bk)?;
        let v = linear(tape, flat, wv, bv)?;
        let q = tape.reshape(q, vec![m, time, f])?;
        let k = tape.reshape(k, vec![m, time, f])?;
        let v = tape.reshape(v, vec![m, time, f])?;
        let a = tape.attention(q, k, v, config.heads)?;
        attention.push(a);
        let a = tape.reshape(a, vec![m * time, f])?;
        let a = linear(tape, a, wo, bo)?;
        let a = tape.dropout(a, config.dropout, train, rng)?;
        let res = tape.add(flat, a)?;
        let (g1, b1) = (next(), next());
        let x1 = tape.layer_norm(res, Some(g1), Some(b1), LAYER_NORM_EPS)?;

        let (w1, c1, w2, c2) = (next(), next(), next(), next());
        let h = linear(tape, x1, w1, c1)?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, config.dropout, train, rng)?;
        let h = linear(tape, h, w2, c2)?;
        let h = tape.dropout(h, config.dropout, train, rng)?;
        let res = tape.add(x1, h)?;
        let (g2, b2) = (next(), next());
        flat = tape.layer_norm(res, Some(g2), Some(b2), LAYER_NORM_EPS)?;
    }
    let (g, b) = (next(), next());
    let normed = tape.layer_norm(flat, Some(g), Some(b), LAYER_NORM_EPS)?;
    let seq = tape.reshape(normed, vec![m, time, f])?;
    let features = tape.max_over_axis(seq, 1)?;
    let (w, b) = (next(), next());
    let logits = linear(tape, features, w, b)?;
    Ok(ForwardVars {
        logits,
        features,
        attention,
    })
}
