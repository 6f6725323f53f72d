use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::motion::COARSE_DIMS;
use crate::nn::{ParamSet, Tape, Var};

const KERNEL: usize = 3;

/// One temporal convolution: kernel 3, padding 1, `cin → cout` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvLayer {
    fn new<R: Rng>(params: &mut ParamSet, rng: &mut R, cin: usize, cout: usize, stride: usize) -> Self {
        let weight = params.linear_weight(rng, KERNEL * cin, cout);
        let bias = params.zeros(1, cout);
        Self {
            weight,
            bias,
            stride,
            cin,
            cout,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let cols = tape.unfold(x, KERNEL, self.stride, 1);
        let y = tape.matmul(cols, vars[self.weight]);
        tape.add_row(y, vars[self.bias])
    }
}

/// Temporal convolution encoder/decoder for coarse motion.
///
/// Encoder: `log2(r)` stride-2 convolutions with ReLU (42→h, then h→h),
/// followed by a stride-1 projection h→C_z. Decoder: a stride-1 projection
/// C_z→h with ReLU, then per stage a ×2 nearest upsample and a convolution,
/// ReLU between stages and none after the final h→42 layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCoder {
    pub params: ParamSet,
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    pub hidden: usize,
    pub latent_dim: usize,
    pub rate: usize,
    pub input_dim: usize,
}

impl ConvCoder {
    pub fn new<R: Rng>(rng: &mut R, hidden: usize, latent_dim: usize, rate: usize) -> Result<Self> {
        Self::with_input_dim(rng, COARSE_DIMS, hidden, latent_dim, rate)
    }

    pub fn with_input_dim<R: Rng>(
        rng: &mut R,
        input_dim: usize,
        hidden: usize,
        latent_dim: usize,
        rate: usize,
    ) -> Result<Self> {
        if rate == 0 || !rate.is_power_of_two() {
            return Err(Error::Config(format!("downsample rate {rate} must be a power of two")));
        }
        if hidden == 0 || latent_dim == 0 {
            return Err(Error::Config("coder widths must be positive".into()));
        }
        let stages = rate.trailing_zeros() as usize;
        let mut params = ParamSet::new();
        let mut encoder = Vec::new();
        let mut cin = input_dim;
        for _ in 0..stages.max(1) {
            let stride = if stages == 0 { 1 } else { 2 };
            encoder.push(ConvLayer::new(&mut params, rng, cin, hidden, stride));
            cin = hidden;
        }
        encoder.push(ConvLayer::new(&mut params, rng, hidden, latent_dim, 1));
        let mut decoder = vec![ConvLayer::new(&mut params, rng, latent_dim, hidden, 1)];
        for s in 0..stages.max(1) {
            let cout = if s + 1 == stages.max(1) { input_dim } else { hidden };
            decoder.push(ConvLayer::new(&mut params, rng, hidden, cout, 1));
        }
        Ok(Self {
            params,
            encoder,
            decoder,
            hidden,
            latent_dim,
            rate,
            input_dim,
        })
    }

    fn stages(&self) -> usize {
        self.rate.trailing_zeros() as usize
    }

    /// Pads `x` on the right with copies of its last row up to a multiple of the rate.
    pub fn pad_to_rate(&self, x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let target = n.div_ceil(self.rate) * self.rate;
        let mut out = Array2::zeros((target, x.ncols()));
        for i in 0..target {
            out.row_mut(i).assign(&x.row(i.min(n - 1)));
        }
        out
    }

    /// Encoder graph on an already padded input.
    pub fn encode_tape(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let last = self.encoder.len() - 1;
        let mut h = x;
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.forward(tape, vars, h);
            if i < last {
                h = tape.relu(h);
            }
        }
        h
    }

    pub fn decode_tape(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Var {
        let mut h = self.decoder[0].forward(tape, vars, z);
        h = tape.relu(h);
        let last = self.decoder.len() - 1;
        for (i, layer) in self.decoder.iter().enumerate().skip(1) {
            if self.stages() > 0 {
                let len = tape.value(h).nrows();
                h = tape.gather_rows(h, (0..2 * len).map(|r| Some(r / 2)).collect());
            }
            h = layer.forward(tape, vars, h);
            if i < last {
                h = tape.relu(h);
            }
        }
        h
    }

    /// `N×input_dim → ceil(N/r)×C_z`.
    pub fn encode_array(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "coder expects {} input channels, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        if x.nrows() < self.rate {
            return Err(Error::SequenceTooShort {
                need: self.rate,
                got: x.nrows(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let input = tape.leaf(self.pad_to_rate(x));
        let z = self.encode_tape(&mut tape, &vars, input);
        Ok(tape.value(z).clone())
    }

    /// `N′×C_z → (r·N′)×input_dim`.
    pub fn decode_array(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.latent_dim {
            return Err(Error::shape(format!(
                "decoder expects {} latent channels, got {}",
                self.latent_dim,
                z.ncols()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let input = tape.leaf(z.clone());
        let out = self.decode_tape(&mut tape, &vars, input);
        Ok(tape.value(out).clone())
    }
}
