//! Logit functions `f(x, θ)` mapping an item to K topic logits.
//!
//! Three kinds are supported:
//!
//! * [`Mlp`]: a feedforward network over dense embeddings,
//! * [`Table`]: a free K×V logit table over categorical tokens, i.e. a
//!   per-token distribution over topics after the softmax,
//! * [`FixedLogLik`]: a fixed K×V table of per-topic token probabilities β
//!   whose log is used directly as `g`; this reproduces classical LDA.
//!
//! Parameters of the trainable kinds are stored as one flat buffer so that
//! optimizers and checkpoints can treat them uniformly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, SeededRng};
use crate::scalar::Scalar;

/// A single observation: a dense embedding or a token id.
#[derive(Debug, Clone, PartialEq)]
pub enum Item<T> {
    Dense(Vec<T>),
    Token(usize),
}

impl<T> Item<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Item::Dense(_) => "dense",
            Item::Token(_) => "token",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// Shape of one dense layer `y = act(W x + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Feedforward network. Per layer, the flat buffer holds the row-major
/// `output × input` weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<LayerShape>,
    params: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<LayerShape>, params: Vec<T>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("mlp needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output != pair[1].input {
                return Err(Error::contract(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output,
                    i + 1,
                    pair[1].input
                )));
            }
        }
        if layers.iter().any(|l| l.input == 0 || l.output == 0) {
            return Err(Error::contract("mlp layer widths must be positive"));
        }
        let expected: usize = layers.iter().map(LayerShape::num_params).sum();
        if params.len() != expected {
            return Err(Error::contract(format!(
                "mlp expects {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Mlp { layers, params })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    /// Forward pass keeping pre-activations and outputs of every layer.
    /// `outputs[0]` is the input itself.
    fn forward_trace(&self, x: &[T]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let w = &self.params[offset..offset + layer.input * layer.output];
            let b = &self.params[offset + layer.input * layer.output..offset + layer.num_params()];
            let input = outputs.last().expect("input present");
            let z: Vec<T> = (0..layer.output)
                .map(|o| {
                    let row = &w[o * layer.input..(o + 1) * layer.input];
                    row.iter().zip(input).map(|(a, b)| *a * *b).sum::<T>() + b[o]
                })
                .collect();
            let y = z.iter().map(|v| layer.activation.apply(*v)).collect();
            pre.push(z);
            outputs.push(y);
            offset += layer.num_params();
        }
        (pre, outputs)
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        let (_, mut outputs) = self.forward_trace(x);
        outputs.pop().expect("at least one layer")
    }

    fn accumulate_backward(&self, x: &[T], grad_out: &[T], grad: &mut [T]) {
        let (pre, outputs) = self.forward_trace(x);
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            offsets.push(offset);
            offset += layer.num_params();
        }
        let mut delta: Vec<T> = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (o, d) in delta.iter_mut().enumerate() {
                *d *= layer.activation.derivative(pre[l][o], outputs[l + 1][o]);
            }
            let base = offsets[l];
            let input = &outputs[l];
            let w_len = layer.input * layer.output;
            for o in 0..layer.output {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let row = &mut grad[base + o * layer.input..base + (o + 1) * layer.input];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * *xi;
                }
                grad[base + w_len + o] += d;
            }
            if l > 0 {
                let w = &self.params[base..base + w_len];
                let mut next = vec![T::zero(); layer.input];
                for o in 0..layer.output {
                    let d = delta[o];
                    let row = &w[o * layer.input..(o + 1) * layer.input];
                    for (n, wi) in next.iter_mut().zip(row) {
                        *n += d * *wi;
                    }
                }
                delta = next;
            }
        }
    }
}

/// Free K×V logit table stored row-major (`logits[k * V + v]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Table<T> {
    k: usize,
    v: usize,
    logits: Vec<T>,
}

impl<T: Scalar> Table<T> {
    pub fn new(k: usize, v: usize, logits: Vec<T>) -> Result<Self> {
        if k == 0 || v == 0 {
            return Err(Error::contract("table dimensions must be positive"));
        }
        if logits.len() != k * v {
            return Err(Error::contract(format!(
                "table expects {} entries, got {}",
                k * v,
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("table logits must be finite"));
        }
        Ok(Table { k, v, logits })
    }

    pub fn topics(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn get(&self, topic: usize, token: usize) -> T {
        self.logits[topic * self.v + token]
    }
}

/// Per-topic token distributions β (K×V, rows on the simplex).
#[derive(Debug, Clone, PartialEq)]
pub struct FixedLogLik<T> {
    k: usize,
    v: usize,
    beta: Vec<T>,
}

impl<T: Scalar> FixedLogLik<T> {
    pub fn new(k: usize, v: usize, beta: Vec<T>) -> Result<Self> {
        if k == 0 || v == 0 || beta.len() != k * v {
            return Err(Error::contract("beta must be a non-empty K×V matrix"));
        }
        for row in beta.chunks(v) {
            math::Simplex::new(row.to_vec())
                .map_err(|e| Error::contract(format!("beta row is not a distribution: {e}")))?;
        }
        Ok(FixedLogLik { k, v, beta })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let k = rows.len();
        let v = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != v) {
            return Err(Error::contract("beta rows have different lengths"));
        }
        Self::new(k, v, rows.concat())
    }

    pub fn topics(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn beta(&self, topic: usize, token: usize) -> T {
        self.beta[topic * self.v + token]
    }
}

/// Parameters θ of the logit function.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams<T> {
    Mlp(Mlp<T>),
    Table(Table<T>),
    FixedLogLik(FixedLogLik<T>),
}

/// Gradient with respect to the flat parameter buffer of an `Mlp` or `Table`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradient<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> EncoderGradient<T> {
    pub fn zeros_like(theta: &EncoderParams<T>) -> Self {
        EncoderGradient {
            values: vec![T::zero(); theta.num_params()],
        }
    }

    pub fn add_assign(&mut self, other: &EncoderGradient<T>) {
        assert_eq!(self.values.len(), other.values.len(), "gradient shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Architecture requested from [`init_params`].
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSpec<T> {
    Mlp {
        input: usize,
        hidden: Vec<usize>,
        topics: usize,
        activation: Activation,
    },
    Table {
        topics: usize,
        vocab_size: usize,
    },
    FixedLogLik {
        beta: Vec<Vec<T>>,
    },
}

impl<T> EncoderSpec<T> {
    /// Default MLP: one hidden layer of width 128 with tanh.
    pub fn default_mlp(input: usize, topics: usize) -> Self {
        EncoderSpec::Mlp {
            input,
            hidden: vec![128],
            topics,
            activation: Activation::Tanh,
        }
    }
}

/// Initializes encoder parameters.
///
/// MLP weights are `N(0, scale² / fan_in)` and biases zero. Table logits are
/// `N(0, scale²)`: an all-zero table is a symmetric stationary point of
/// unsupervised training, so a small `scale` is needed to break the tie.
/// `scale = 0` gives all-zero parameters for both kinds.
pub fn init_params<T: Scalar>(
    spec: &EncoderSpec<T>,
    scale: T,
    rng: &mut SeededRng,
) -> Result<EncoderParams<T>> {
    if !(scale.is_finite() && scale >= T::zero()) {
        return Err(Error::contract("init scale must be finite and non-negative"));
    }
    match spec {
        EncoderSpec::Mlp {
            input,
            hidden,
            topics,
            activation,
        } => {
            let mut widths = vec![*input];
            widths.extend(hidden.iter().copied());
            widths.push(*topics);
            let layers: Vec<LayerShape> = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| LayerShape {
                    input: w[0],
                    output: w[1],
                    activation: if i + 2 == widths.len() {
                        Activation::Identity
                    } else {
                        *activation
                    },
                })
                .collect();
            if layers.iter().any(|l| l.input == 0 || l.output == 0) {
                return Err(Error::contract("mlp layer widths must be positive"));
            }
            let mut params = Vec::new();
            for layer in &layers {
                let std = scale.as_f64() / (layer.input as f64).sqrt();
                for _ in 0..layer.input * layer.output {
                    params.push(T::lit(std * rng.normal()));
                }
                params.extend(std::iter::repeat_n(T::zero(), layer.output));
            }
            Ok(EncoderParams::Mlp(Mlp::new(layers, params)?))
        }
        EncoderSpec::Table { topics, vocab_size } => {
            let std = scale.as_f64();
            let logits = (0..topics * vocab_size)
                .map(|_| T::lit(std * rng.normal()))
                .collect();
            Ok(EncoderParams::Table(Table::new(*topics, *vocab_size, logits)?))
        }
        EncoderSpec::FixedLogLik { beta } => Ok(EncoderParams::FixedLogLik(FixedLogLik::from_rows(beta)?)),
    }
}

impl<T: Scalar> EncoderParams<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EncoderParams::Mlp(_) => "mlp",
            EncoderParams::Table(_) => "table",
            EncoderParams::FixedLogLik(_) => "fixed_loglik",
        }
    }

    pub fn num_topics(&self) -> usize {
        match self {
            EncoderParams::Mlp(m) => m.output_dim(),
            EncoderParams::Table(t) => t.k,
            EncoderParams::FixedLogLik(f) => f.k,
        }
    }

    /// Number of trainable parameters (zero for `FixedLogLik`).
    pub fn num_params(&self) -> usize {
        match self {
            EncoderParams::Mlp(m) => m.params.len(),
            EncoderParams::Table(t) => t.logits.len(),
            EncoderParams::FixedLogLik(_) => 0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self, EncoderParams::FixedLogLik(_))
    }

    /// Flat view of the trainable parameters.
    pub fn params(&self) -> &[T] {
        match self {
            EncoderParams::Mlp(m) => &m.params,
            EncoderParams::Table(t) => &t.logits,
            EncoderParams::FixedLogLik(_) => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            EncoderParams::Mlp(m) => &mut m.params,
            EncoderParams::Table(t) => &mut t.logits,
            EncoderParams::FixedLogLik(_) => &mut [],
        }
    }

    /// Checks that `item` can be fed to this encoder.
    pub fn check_item(&self, item: &Item<T>) -> Result<()> {
        match (self, item) {
            (EncoderParams::Mlp(m), Item::Dense(x)) => {
                if x.len() != m.input_dim() {
                    return Err(Error::contract(format!(
                        "embedding has dimension {}, encoder expects {}",
                        x.len(),
                        m.input_dim()
                    )));
                }
                Ok(())
            }
            (EncoderParams::Table(Table { v, .. }), Item::Token(tok))
            | (EncoderParams::FixedLogLik(FixedLogLik { v, .. }), Item::Token(tok)) => {
                if tok >= v {
                    return Err(Error::contract(format!(
                        "token {tok} out of range for vocabulary of size {v}"
                    )));
                }
                Ok(())
            }
            (enc, item) => Err(Error::contract(format!(
                "{} encoder cannot take a {} item",
                enc.kind_name(),
                item.kind()
            ))),
        }
    }

    /// The K logits `f(x, θ)`. For `FixedLogLik` these are `ln β[·, x]`,
    /// with exact `-inf` where β is zero.
    pub fn forward_logits(&self, item: &Item<T>) -> Result<Vec<T>> {
        self.check_item(item)?;
        Ok(match (self, item) {
            (EncoderParams::Mlp(m), Item::Dense(x)) => m.forward(x),
            (EncoderParams::Table(t), Item::Token(tok)) => {
                (0..t.k).map(|k| t.logits[k * t.v + tok]).collect()
            }
            (EncoderParams::FixedLogLik(f), Item::Token(tok)) => {
                (0..f.k).map(|k| f.beta[k * f.v + tok].ln()).collect()
            }
            _ => unreachable!("checked by check_item"),
        })
    }

    /// Normalized log-likelihood `g(x, θ)`: `ln softmax f` for the
    /// discriminative kinds, the unnormalized `ln β[·, x]` for `FixedLogLik`.
    pub fn log_softmax_g(&self, item: &Item<T>) -> Result<Vec<T>> {
        let mut f = self.forward_logits(item)?;
        if self.is_trainable() {
            math::log_softmax_in_place(&mut f);
        }
        Ok(f)
    }

    /// Gradient of ⟨grad_wrt_logits, f(x, θ)⟩ with respect to θ.
    pub fn backward(&self, item: &Item<T>, grad_wrt_logits: &[T]) -> Result<EncoderGradient<T>> {
        let mut grad = EncoderGradient::zeros_like(self);
        self.accumulate_backward(item, grad_wrt_logits, &mut grad)?;
        Ok(grad)
    }

    /// Like [`EncoderParams::backward`] but adds into an existing gradient.
    pub fn accumulate_backward(
        &self,
        item: &Item<T>,
        grad_wrt_logits: &[T],
        grad: &mut EncoderGradient<T>,
    ) -> Result<()> {
        if !self.is_trainable() {
            return Err(Error::Unsupported(
                "fixed_loglik encoders have no trainable parameters".into(),
            ));
        }
        self.check_item(item)?;
        if grad_wrt_logits.len() != self.num_topics() {
            return Err(Error::contract("logit gradient has the wrong length"));
        }
        if grad.values.len() != self.num_params() {
            return Err(Error::contract("gradient buffer does not match parameters"));
        }
        match (self, item) {
            (EncoderParams::Mlp(m), Item::Dense(x)) => {
                m.accumulate_backward(x, grad_wrt_logits, &mut grad.values)
            }
            (EncoderParams::Table(t), Item::Token(tok)) => {
                for (k, g) in grad_wrt_logits.iter().enumerate() {
                    grad.values[k * t.v + tok] += *g;
                }
            }
            _ => unreachable!("checked by check_item"),
        }
        Ok(())
    }
}
