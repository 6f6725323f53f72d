//! Minimal neural-network toolkit backing the desk-scale models.

mod optim;
mod tape;

pub use optim::{clip_grad_norm, AdamW};
pub use tape::{Gradients, Tape, Var};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// An ordered collection of parameter tensors.
///
/// Order is significant: checkpoints serialise tensors in index order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor drawn from `U(-bound, bound)` and returns its index.
    pub fn uniform<R: Rng>(&mut self, rng: &mut R, rows: usize, cols: usize, bound: f64) -> usize {
        let dist = Uniform::new_inclusive(-bound, bound);
        let t = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.push(t)
    }

    /// Fan-in scaled uniform initialisation for a `fan_in×fan_out` weight.
    pub fn linear_weight<R: Rng>(&mut self, rng: &mut R, fan_in: usize, fan_out: usize) -> usize {
        let bound = (1.0 / fan_in as f64).sqrt();
        self.uniform(rng, fan_in, fan_out, bound)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> usize {
        self.push(Array2::zeros((rows, cols)))
    }

    pub fn push(&mut self, t: Array2<f64>) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Array2<f64> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a leaf on `tape`, in index order.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Collects the gradient of every attached tensor (zeros when unused).
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Array2<f64>> {
        self.tensors
            .iter()
            .zip(vars)
            .map(|(t, &v)| grads.get_or_zeros(v, t))
            .collect()
    }

    /// Flattened view of every parameter, in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    /// Overwrites every parameter from a flat slice produced by [`ParamSet::flatten`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), usize> {
        let need = self.scalar_count();
        if flat.len() != need {
            return Err(need);
        }
        let mut off = 0;
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Dense layer `x·W + b` with weight and bias stored in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new<R: Rng>(params: &mut ParamSet, rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let weight = params.linear_weight(rng, fan_in, fan_out);
        let bias = params.zeros(1, fan_out);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let y = tape.matmul(x, vars[self.weight]);
        tape.add_row(y, vars[self.bias])
    }
}

/// Layer normalisation with learned gain and shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: usize,
    pub shift: usize,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, width: usize) -> Self {
        let gain = params.push(Array2::ones((1, width)));
        let shift = params.zeros(1, width);
        Self { gain, shift }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let y = tape.layer_norm(x);
        let y = tape.mul_row(y, vars[self.gain]);
        tape.add_row(y, vars[self.shift])
    }
}

/// Multi-head scaled dot-product attention with separate query/key/value
/// projections and an output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub width: usize,
}

impl Attention {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        width: usize,
        context_width: usize,
        heads: usize,
    ) -> Self {
        assert!(width.is_multiple_of(heads), "width must be divisible by heads");
        Self {
            query: Linear::new(params, rng, width, width),
            key: Linear::new(params, rng, context_width, width),
            value: Linear::new(params, rng, context_width, width),
            out: Linear::new(params, rng, width, width),
            heads,
            width,
        }
    }

    /// Attends from rows of `x` to rows of `context`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, context: Var, causal: bool) -> Var {
        let q = self.query.forward(tape, vars, x);
        let k = self.key.forward(tape, vars, context);
        let v = self.value.forward(tape, vars, context);
        let head_dim = self.width / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice_cols(q, a, b);
            let kh = tape.slice_cols(k, a, b);
            let vh = tape.slice_cols(v, a, b);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax(scores, causal);
            outs.push(tape.matmul(probs, vh));
        }
        let cat = tape.concat_cols(&outs);
        self.out.forward(tape, vars, cat)
    }
}

/// Pre-norm transformer block: self-attention then a ReLU MLP, both residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub up: Linear,
    pub down: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng>(params: &mut ParamSet, rng: &mut R, width: usize, heads: usize) -> Self {
        Self {
            norm1: LayerNorm::new(params, width),
            attn: Attention::new(params, rng, width, width, heads),
            norm2: LayerNorm::new(params, width),
            up: Linear::new(params, rng, width, 2 * width),
            down: Linear::new(params, rng, 2 * width, width),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, causal: bool) -> Var {
        let h = self.norm1.forward(tape, vars, x);
        let a = self.attn.forward(tape, vars, h, h, causal);
        let x = tape.add(x, a);
        let h = self.norm2.forward(tape, vars, x);
        let h = self.up.forward(tape, vars, h);
        let h = tape.relu(h);
        let h = self.down.forward(tape, vars, h);
        tape.add(x, h)
    }
}

/// Sinusoidal embedding of a scalar position/step, `width` must be even.
pub fn sinusoidal_embedding(value: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (value * freq).sin();
        out[half + i] = (value * freq).cos();
    }
    out
}
