//! Choreographic memory: a codebook of coarse-motion latents, a temporal
//! convolution coder and the token sequences they produce.

mod coder;
mod train;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::CoarseMotion;

pub use coder::{ConvCoder, ConvLayer};
pub use train::{recon_loss_tape, train_vq, VqModel, VqTrainConfig, VqTrainReport};

pub const DEFAULT_DECAY: f64 = 0.99;
/// Steps without assignment after which an entry is reseeded during training.
pub const DEAD_CODE_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub entries: Array2<f64>,
    pub ema_counts: Vec<f64>,
    pub ema_sums: Array2<f64>,
}

impl Codebook {
    /// Wraps `entries`, seeding the EMA state with unit counts.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() < 2 {
            return Err(Error::Config(format!(
                "codebook needs at least 2 entries, got {}",
                entries.nrows()
            )));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::data("codebook entries must be finite"));
        }
        Ok(Self {
            ema_counts: vec![1.0; entries.nrows()],
            ema_sums: entries.clone(),
            entries,
        })
    }

    pub fn random<R: Rng>(rng: &mut R, size: usize, dim: usize, scale: f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((size, dim), |_| rng.gen_range(-scale..=scale)))
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    /// The End token id, one past the last entry.
    pub fn end_id(&self) -> usize {
        self.size()
    }
}

/// Nearest entry by Euclidean distance; ties go to the lowest index.
pub fn quantize(z_hat: ArrayView1<'_, f64>, codebook: &Codebook) -> (usize, Array1<f64>) {
    let mut best = (0, f64::INFINITY);
    for (k, row) in codebook.entries.outer_iter().enumerate() {
        let d: f64 = row.iter().zip(z_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    (best.0, codebook.entries.row(best.0).to_owned())
}

/// Quantizes every row, returning indices and the stacked entries.
pub fn quantize_rows(z_hat: &Array2<f64>, codebook: &Codebook) -> (Vec<usize>, Array2<f64>) {
    let mut z = Array2::zeros(z_hat.raw_dim());
    let ids = z_hat
        .outer_iter()
        .enumerate()
        .map(|(i, row)| {
            let (k, e) = quantize(row, codebook);
            z.row_mut(i).assign(&e);
            k
        })
        .collect();
    (ids, z)
}

/// `N′×C_z` encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub data: Array2<f64>,
}

/// Token ids in `[0, K)`, optionally closed by the End id `K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, codebook_size: usize) -> Result<Self> {
        for (i, &id) in ids.iter().enumerate() {
            if id > codebook_size || (id == codebook_size && i + 1 != ids.len()) {
                return Err(Error::data(format!("invalid token {id} at position {i}")));
            }
        }
        Ok(Self { ids })
    }

    /// Tokens without the trailing End, if present.
    pub fn content(&self, codebook_size: usize) -> &[usize] {
        match self.ids.last() {
            Some(&last) if last == codebook_size => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.ids)?)
    }

    pub fn from_json(text: &str, codebook_size: usize) -> Result<Self> {
        Self::new(serde_json::from_str(text)?, codebook_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLoss {
    pub total: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commit: f64,
}

fn mean_square_diff(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64)
}

/// VQ-VAE objective. The codebook term moves entries toward the (frozen)
/// encoder output and the commitment term moves the encoder toward the
/// (frozen) entries; both evaluate to the same mean square, so only their
/// gradient routing differs. During training gradients reach `ẑ` through a
/// straight-through copy of `z`.
pub fn vqvae_loss(
    target: &Array2<f64>,
    recon: &Array2<f64>,
    z_hat: &Array2<f64>,
    z: &Array2<f64>,
    beta: f64,
) -> Result<VqLoss> {
    let recon_term = mean_square_diff(recon, target, "reconstruction")?;
    let gap = mean_square_diff(z_hat, z, "latents")?;
    let commit = beta * gap;
    Ok(VqLoss {
        total: recon_term + gap + commit,
        recon: recon_term,
        codebook: gap,
        commit,
    })
}

pub fn encode(coarse: &CoarseMotion, coder: &ConvCoder) -> Result<LatentSequence> {
    Ok(LatentSequence {
        data: coder.encode_array(&coarse.data)?,
    })
}

/// Looks up entries for the content tokens and decodes `r × count` frames.
pub fn decode(tokens: &TokenSequence, codebook: &Codebook, coder: &ConvCoder) -> Result<CoarseMotion> {
    let content = tokens.content(codebook.size());
    if content.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut z = Array2::zeros((content.len(), codebook.dim()));
    for (i, &id) in content.iter().enumerate() {
        if id >= codebook.size() {
            return Err(Error::data(format!("token {id} at position {i} is not a codebook entry")));
        }
        z.row_mut(i).assign(&codebook.entries.row(id));
    }
    CoarseMotion::new(coder.decode_array(&z)?)
}

/// Encodes, quantizes each step and appends End.
pub fn tokenize(coarse: &CoarseMotion, coder: &ConvCoder, codebook: &Codebook) -> Result<TokenSequence> {
    let latents = encode(coarse, coder)?;
    let (mut ids, _) = quantize_rows(&latents.data, codebook);
    ids.push(codebook.end_id());
    Ok(TokenSequence { ids })
}

/// Exponential moving average update of the entries assigned in this batch.
/// Entries with no assignment keep their state untouched.
pub fn ema_update(codebook: &mut Codebook, latents: &Array2<f64>, indices: &[usize], decay: f64) {
    let dim = codebook.dim();
    let mut counts = vec![0.0; codebook.size()];
    let mut sums = Array2::<f64>::zeros((codebook.size(), dim));
    for (row, &k) in latents.outer_iter().zip(indices) {
        counts[k] += 1.0;
        let mut s = sums.row_mut(k);
        s += &row;
    }
    for k in 0..codebook.size() {
        if counts[k] == 0.0 {
            continue;
        }
        codebook.ema_counts[k] = decay * codebook.ema_counts[k] + (1.0 - decay) * counts[k];
        for c in 0..dim {
            codebook.ema_sums[[k, c]] = decay * codebook.ema_sums[[k, c]] + (1.0 - decay) * sums[[k, c]];
        }
        let n = codebook.ema_counts[k];
        if n > 0.0 {
            for c in 0..dim {
                codebook.entries[[k, c]] = codebook.ema_sums[[k, c]] / n;
            }
        }
    }
}
