use std::fs;
use std::path::Path;

use log::info;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ema_update, quantize_rows, tokenize, decode, Codebook, ConvCoder, DEAD_CODE_STEPS};
use crate::error::{Error, Result};
use crate::motion::CoarseMotion;
use crate::nn::{clip_grad_norm, AdamW, Tape, Var};

const VQCK_MAGIC: &[u8; 4] = b"VQCK";
const VQCK_VERSION: u32 = 1;

/// A trained coder together with its codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct VqModel {
    pub coder: ConvCoder,
    pub codebook: Codebook,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqTrainConfig {
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub rate: usize,
    pub steps: usize,
    pub batch: usize,
    /// Training window length in frames (rounded down to a multiple of the rate).
    pub window: usize,
    pub lr: f64,
    pub beta: f64,
    pub decay: f64,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            codebook_size: 64,
            latent_dim: 32,
            hidden: 64,
            rate: 4,
            steps: 2000,
            batch: 8,
            window: 64,
            lr: 2e-3,
            beta: 1.0,
            decay: super::DEFAULT_DECAY,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqTrainReport {
    /// Per-step reconstruction term on the training batch.
    pub losses: Vec<f64>,
    pub initial_mse: f64,
    pub final_mse: f64,
}

/// `mean((D(E(x)) − x)²)` without quantization, on an input whose length is
/// a multiple of the rate.
pub fn recon_loss_tape(coder: &ConvCoder, tape: &mut Tape, vars: &[Var], x: &Array2<f64>) -> Var {
    let input = tape.leaf(x.clone());
    let z = coder.encode_tape(tape, vars, input);
    let out = coder.decode_tape(tape, vars, z);
    let diff = tape.sub(out, input);
    tape.mean_squares(diff)
}

impl VqModel {
    /// Mean squared error of tokenize → decode over whole sequences.
    pub fn reconstruction_mse(&self, corpus: &[CoarseMotion]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in corpus {
            let tokens = tokenize(seq, &self.coder, &self.codebook)?;
            let recon = decode(&tokens, &self.codebook, &self.coder)?;
            let n = seq.len();
            let diff = &recon.data.slice(s![..n, ..]) - &seq.data;
            total += diff.iter().map(|v| v * v).sum::<f64>();
            count += diff.len();
        }
        Ok(total / count.max(1) as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(VQCK_MAGIC);
        for v in [
            VQCK_VERSION,
            self.codebook.size() as u32,
            self.codebook.dim() as u32,
            self.coder.rate as u32,
            self.coder.hidden as u32,
            self.coder.input_dim as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let payload = self
            .codebook
            .entries
            .iter()
            .chain(self.codebook.ema_counts.iter())
            .chain(self.codebook.ema_sums.iter())
            .copied()
            .chain(self.coder.params.flatten());
        for v in payload {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 28 || &bytes[..4] != VQCK_MAGIC {
            return Err(Error::data("missing VQCK header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        if word(1) != VQCK_VERSION as usize {
            return Err(Error::data(format!("unsupported vqck version {}", word(1))));
        }
        let (k, dim, rate, hidden, input_dim) = (word(2), word(3), word(4), word(5), word(6));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut coder = ConvCoder::with_input_dim(&mut rng, input_dim, hidden, dim, rate)?;
        let need = 2 * k * dim + k + coder.params.scalar_count();
        let values = crate::motion::io::decode_f32s(&bytes[28..], need)?;
        let entries = Array2::from_shape_vec((k, dim), values[..k * dim].to_vec()).expect("sized");
        let counts = values[k * dim..k * dim + k].to_vec();
        let sums = Array2::from_shape_vec((k, dim), values[k * dim + k..2 * k * dim + k].to_vec())
            .expect("sized");
        coder
            .params
            .load_flat(&values[2 * k * dim + k..])
            .map_err(|n| Error::data(format!("coder expects {n} parameters")))?;
        let mut codebook = Codebook::new(entries)?;
        codebook.ema_counts = counts;
        codebook.ema_sums = sums;
        Ok(Self { coder, codebook })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn sample_window(corpus: &[CoarseMotion], window: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let seq = &corpus[rng.gen_range(0..corpus.len())];
    let len = window.min(seq.len());
    let start = rng.gen_range(0..=seq.len() - len);
    seq.data.slice(s![start..start + len, ..]).to_owned()
}

/// Trains coder and codebook with a straight-through estimator, EMA codebook
/// updates and dead-code reseeding.
pub fn train_vq(corpus: &[CoarseMotion], cfg: &VqTrainConfig) -> Result<(VqModel, VqTrainReport)> {
    if corpus.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if let Some(short) = corpus.iter().find(|c| c.len() < cfg.rate) {
        return Err(Error::SequenceTooShort {
            need: cfg.rate,
            got: short.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coder = ConvCoder::new(&mut rng, cfg.hidden, cfg.latent_dim, cfg.rate)?;
    let window = (cfg.window / cfg.rate).max(1) * cfg.rate;

    let mut pool = Vec::new();
    while pool.len() < cfg.codebook_size {
        let x = sample_window(corpus, window, &mut rng);
        let z = coder.encode_array(&x)?;
        pool.extend(z.outer_iter().map(|r| r.to_owned()));
    }
    let mut entries = Array2::zeros((cfg.codebook_size, cfg.latent_dim));
    for k in 0..cfg.codebook_size {
        let src = &pool[rng.gen_range(0..pool.len())];
        for c in 0..cfg.latent_dim {
            entries[[k, c]] = src[c] + rng.gen_range(-1e-3..1e-3);
        }
    }
    let mut model = VqModel {
        coder,
        codebook: Codebook::new(entries)?,
    };
    let initial_mse = model.reconstruction_mse(corpus)?;
    info!("vq: initial reconstruction mse {initial_mse:.5}");

    let mut opt = AdamW::new(&model.coder.params, cfg.lr, 0.9, 0.999);
    let mut idle = vec![0usize; cfg.codebook_size];
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let windows: Vec<Array2<f64>> = (0..cfg.batch)
            .map(|_| {
                let x = sample_window(corpus, window, &mut rng);
                model.coder.pad_to_rate(&x)
            })
            .collect();
        let results: Vec<(f64, Vec<Array2<f64>>, Array2<f64>, Vec<usize>)> = windows
            .par_iter()
            .map(|x| {
                let coder = &model.coder;
                let mut tape = Tape::new();
                let vars = coder.params.attach(&mut tape);
                let input = tape.leaf(x.clone());
                let z_hat = coder.encode_tape(&mut tape, &vars, input);
                let z_hat_val = tape.value(z_hat).clone();
                let (ids, z) = quantize_rows(&z_hat_val, &model.codebook);
                let shift = tape.leaf(&z - &z_hat_val);
                let z_st = tape.add(z_hat, shift);
                let out = coder.decode_tape(&mut tape, &vars, z_st);
                let diff = tape.sub(out, input);
                let recon = tape.mean_squares(diff);
                let frozen = tape.leaf(z);
                let gap = tape.sub(z_hat, frozen);
                let commit = tape.mean_squares(gap);
                let commit = tape.scale(commit, cfg.beta);
                let loss = tape.add(recon, commit);
                let grads = tape.backward(loss);
                (
                    tape.scalar(recon),
                    coder.params.collect_grads(&grads, &vars),
                    z_hat_val,
                    ids,
                )
            })
            .collect();

        let mut grads: Vec<Array2<f64>> = model.coder.params.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        let mut recon = 0.0;
        let mut latents = Vec::new();
        let mut assigned = Vec::new();
        for (r, g, z, ids) in results {
            recon += r / cfg.batch as f64;
            for (acc, gi) in grads.iter_mut().zip(g) {
                *acc += &(gi / cfg.batch as f64);
            }
            latents.extend(z.outer_iter().map(|row| row.to_owned()));
            assigned.extend(ids);
        }
        if !recon.is_finite() {
            return Err(Error::DivergedTraining { step, loss: recon });
        }
        losses.push(recon);
        clip_grad_norm(&mut grads, 1.0);
        opt.step(&mut model.coder.params, &grads);

        let mut lat = Array2::zeros((latents.len(), cfg.latent_dim));
        for (i, row) in latents.iter().enumerate() {
            lat.row_mut(i).assign(row);
        }
        ema_update(&mut model.codebook, &lat, &assigned, cfg.decay);
        idle.iter_mut().for_each(|c| *c += 1);
        for &k in &assigned {
            idle[k] = 0;
        }
        for k in 0..cfg.codebook_size {
            if idle[k] >= DEAD_CODE_STEPS {
                let src = lat.row(rng.gen_range(0..lat.nrows())).to_owned();
                model.codebook.entries.row_mut(k).assign(&src);
                model.codebook.ema_sums.row_mut(k).assign(&src);
                model.codebook.ema_counts[k] = 1.0;
                idle[k] = 0;
            }
        }
        if step % 100 == 0 || step + 1 == cfg.steps {
            info!("vq step {step}: recon {recon:.5}");
        }
    }
    if !model.coder.params.all_finite() {
        return Err(Error::DivergedTraining {
            step: cfg.steps,
            loss: f64::NAN,
        });
    }
    let final_mse = model.reconstruction_mse(corpus)?;
    info!("vq: final reconstruction mse {final_mse:.5}");
    Ok((
        model,
        VqTrainReport {
            losses,
            initial_mse,
            final_mse,
        },
    ))
}
