use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{kaiming_uniform, NnError, ParamId, ParamStore, Real, Result, Tape, Tensor, Var};

/// Affine layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.weight"), kaiming_uniform(rng, &[in_dim, out_dim], in_dim));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    /// `x: [m, in] -> [m, out]`
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w)?;
        tape.add_row_bias(y, b)
    }
}

/// Stack of [`Linear`] layers with ReLU between them; the last layer is affine.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, s)| Linear::new(store, rng, &format!("{name}.{i}"), s[0], s[1]))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn last(&self) -> &Linear {
        &self.layers[self.layers.len() - 1]
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (_, n) = tape.value(x).dims2()?;
        if n != self.in_dim() {
            return Err(NnError::ShapeMismatch(format!("MLP expects {} inputs, got {n}", self.in_dim())));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvEncoderConfig {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub out_dim: usize,
}

impl ConvEncoderConfig {
    pub fn desk(in_channels: usize) -> Self {
        ConvEncoderConfig { in_channels, channels: vec![16, 32, 64, 128], out_dim: 256 }
    }

    /// Smallest height/width accepted: one pixel per halving.
    pub fn min_input(&self) -> usize {
        1 << self.channels.len()
    }
}

/// Stride-2 3x3 convolution blocks, global average pool, linear projection.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub config: ConvEncoderConfig,
    pub convs: Vec<(ParamId, ParamId)>,
    pub proj: Linear,
}

impl ConvEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, config: ConvEncoderConfig) -> Self {
        assert!(!config.channels.is_empty(), "encoder needs at least one block");
        let mut convs = Vec::with_capacity(config.channels.len());
        let mut c_in = config.in_channels;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let fan_in = c_in * 9;
            let w = store.add(format!("{name}.conv{i}.weight"), kaiming_uniform(rng, &[c_out, c_in, 3, 3], fan_in));
            let b = store.add(format!("{name}.conv{i}.bias"), Tensor::zeros(&[c_out]));
            convs.push((w, b));
            c_in = c_out;
        }
        let proj = Linear::new(store, rng, &format!("{name}.proj"), c_in, config.out_dim);
        ConvEncoder { config, convs, proj }
    }

    /// Output of the last conv block before pooling, `[C, h, w]`.
    pub fn feature_map<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match *tape.shape(x) {
            [c, h, w] if c == self.config.in_channels && h >= self.config.min_input() && w >= self.config.min_input() => {}
            ref s => {
                return Err(NnError::ShapeMismatch(format!(
                    "encoder expects [{}, >={m}, >={m}], got {s:?}",
                    self.config.in_channels,
                    m = self.config.min_input()
                )))
            }
        }
        let mut h = x;
        for &(w, b) in &self.convs {
            let (vw, vb) = (tape.param(w), tape.param(b));
            h = tape.conv2d(h, vw, vb, 2, 1)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    /// `[C, H, W] -> [1, out_dim]`
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let fm = self.feature_map(tape, x)?;
        let pooled = tape.global_avg_pool(fm)?;
        self.proj.forward(tape, pooled)
    }
}

/// Bias-free multi-head self-attention without positional encoding.
#[derive(Debug, Clone)]
pub struct Mhsa {
    pub dim: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl Mhsa {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(NnError::ShapeMismatch(format!("model dim {dim} not divisible by {heads} heads")));
        }
        let mut proj = |p: &str| store.add(format!("{name}.{p}"), kaiming_uniform(rng, &[dim, dim], dim));
        Ok(Mhsa { dim, heads, wq: proj("wq"), wk: proj("wk"), wv: proj("wv"), wo: proj("wo") })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        self.forward_with_attention(tape, x).map(|(y, _)| y)
    }

    /// Also returns each head's `[T, T]` attention matrix.
    pub fn forward_with_attention<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<(Var, Vec<Var>)> {
        let (t, d) = tape.value(x).dims2()?;
        if t == 0 || d != self.dim {
            return Err(NnError::ShapeMismatch(format!("attention expects [T>=1, {}], got [{t}, {d}]", self.dim)));
        }
        let (wq, wk, wv, wo) = (tape.param(self.wq), tape.param(self.wk), tape.param(self.wv), tape.param(self.wo));
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let dh = self.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut atts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_bt(qh, kh)?;
            let scores = tape.scale(scores, inv_sqrt);
            let att = tape.softmax_rows(scores)?;
            outs.push(tape.matmul(att, vh)?);
            atts.push(att);
        }
        let cat = tape.concat_cols(&outs)?;
        Ok((tape.matmul(cat, wo)?, atts))
    }
}
