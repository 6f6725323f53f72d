use std::fs;
use std::path::Path;

use log::info;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{GenreId, SequenceModel};
use crate::error::{Error, Result};
use crate::music::{MusicFeatures, FEATURE_DIMS};
use crate::nn::{clip_grad_norm, AdamW, LayerNorm, Linear, ParamSet, Tape, TransformerBlock, Var};
use crate::vq::TokenSequence;

const GPCK_MAGIC: &[u8; 4] = b"GPCK";
const GPCK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyGptConfig {
    pub codebook_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub genres: usize,
    /// Longest token sequence (including End) the position table covers.
    pub max_len: usize,
    /// Music frames per token.
    pub frames_per_token: usize,
}

impl Default for TinyGptConfig {
    fn default() -> Self {
        Self {
            codebook_size: 64,
            width: 64,
            layers: 2,
            heads: 4,
            genres: 4,
            max_len: super::DEFAULT_MAX_TOKENS + 1,
            frames_per_token: 4,
        }
    }
}

/// Decoder-only transformer. Each input position adds a token embedding
/// (BOS first), a learned position embedding, a projection of the music
/// frames under the token being predicted (mean-pooled, standardised) and a
/// genre embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyGpt {
    pub config: TinyGptConfig,
    pub params: ParamSet,
    token_embedding: usize,
    position_embedding: usize,
    genre_embedding: usize,
    music_proj: Linear,
    blocks: Vec<TransformerBlock>,
    final_norm: LayerNorm,
    head: Linear,
}

impl TinyGpt {
    pub fn new<R: Rng>(rng: &mut R, config: TinyGptConfig) -> Result<Self> {
        if !config.width.is_multiple_of(config.heads) || config.codebook_size < 2 || config.genres == 0 {
            return Err(Error::Config(format!("invalid sequence model shape {config:?}")));
        }
        let mut params = ParamSet::new();
        let w = config.width;
        let token_embedding = params.uniform(rng, config.codebook_size + 2, w, 0.1);
        let position_embedding = params.uniform(rng, config.max_len, w, 0.1);
        let genre_embedding = params.uniform(rng, config.genres, w, 0.1);
        let music_proj = Linear::new(&mut params, rng, FEATURE_DIMS, w);
        let blocks = (0..config.layers)
            .map(|_| TransformerBlock::new(&mut params, rng, w, config.heads))
            .collect();
        let final_norm = LayerNorm::new(&mut params, w);
        let head = Linear::new(&mut params, rng, w, config.codebook_size + 1);
        Ok(Self {
            config,
            params,
            token_embedding,
            position_embedding,
            genre_embedding,
            music_proj,
            blocks,
            final_norm,
            head,
        })
    }

    fn bos(&self) -> usize {
        self.config.codebook_size + 1
    }

    /// Mean of the music rows under token `p`, zeros past the end of the music.
    fn pooled_music(&self, music: &MusicFeatures, positions: usize) -> Array2<f64> {
        let r = self.config.frames_per_token;
        let mut out = Array2::zeros((positions, FEATURE_DIMS));
        for p in 0..positions {
            let (a, b) = (p * r, ((p + 1) * r).min(music.len()));
            if a >= b {
                continue;
            }
            for i in a..b {
                let mut row = out.row_mut(p);
                row += &music.data.row(i);
            }
            out.row_mut(p).mapv_inplace(|v| v / (b - a) as f64);
        }
        out
    }

    /// Logits for positions `0..=inputs.len()-1` where `inputs` already starts with BOS.
    fn forward(&self, tape: &mut Tape, vars: &[Var], music: &MusicFeatures, genre: GenreId, inputs: &[usize]) -> Result<Var> {
        let m = inputs.len();
        if m > self.config.max_len {
            return Err(Error::data(format!(
                "token sequence of {m} exceeds the model's {} positions",
                self.config.max_len
            )));
        }
        if genre.0 >= self.config.genres {
            return Err(Error::data(format!("genre {} out of range", genre.0)));
        }
        let tok = tape.gather_rows(vars[self.token_embedding], inputs.iter().map(|&i| Some(i)).collect());
        let pos = tape.slice_rows(vars[self.position_embedding], 0, m);
        let g = tape.slice_rows(vars[self.genre_embedding], genre.0, genre.0 + 1);
        let pooled = tape.leaf(self.pooled_music(music, m));
        let pooled = tape.layer_norm(pooled);
        let mus = self.music_proj.forward(tape, vars, pooled);
        let x = tape.add(tok, pos);
        let x = tape.add(x, mus);
        let mut x = tape.add_row(x, g);
        for block in &self.blocks {
            x = block.forward(tape, vars, x, true);
        }
        let x = self.final_norm.forward(tape, vars, x);
        Ok(self.head.forward(tape, vars, x))
    }

    fn inputs_for(&self, target: &[usize]) -> Vec<usize> {
        std::iter::once(self.bos())
            .chain(target.iter().take(target.len().saturating_sub(1)).copied())
            .collect()
    }

    /// Mean cross-entropy on a tape, for training.
    pub fn loss_tape(&self, tape: &mut Tape, vars: &[Var], music: &MusicFeatures, genre: GenreId, target: &[usize]) -> Result<Var> {
        let logits = self.forward(tape, vars, music, genre, &self.inputs_for(target))?;
        Ok(tape.cross_entropy(logits, target.to_vec()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(GPCK_MAGIC);
        for v in [GPCK_VERSION as usize, c.codebook_size, c.width, c.layers, c.heads, c.genres, c.max_len, c.frames_per_token] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in self.params.flatten() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 36 || &bytes[..4] != GPCK_MAGIC {
            return Err(Error::data("missing GPCK header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        if word(1) != GPCK_VERSION as usize {
            return Err(Error::data(format!("unsupported gpck version {}", word(1))));
        }
        let config = TinyGptConfig {
            codebook_size: word(2),
            width: word(3),
            layers: word(4),
            heads: word(5),
            genres: word(6),
            max_len: word(7),
            frames_per_token: word(8),
        };
        let mut model = Self::new(&mut ChaCha8Rng::seed_from_u64(0), config)?;
        let values = crate::motion::io::decode_f32s(&bytes[36..], model.params.scalar_count())?;
        model.params.load_flat(&values).expect("sized by decode");
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

impl SequenceModel for TinyGpt {
    fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    fn next_token_logits(&self, music: &MusicFeatures, genre: GenreId, prefix: &[usize]) -> Result<Vec<f64>> {
        // Keep the most recent context when the prefix outgrows the position table.
        let keep = prefix.len().min(self.config.max_len - 1);
        let dropped = prefix.len() - keep;
        let r = self.config.frames_per_token;
        let music = if dropped > 0 {
            music.slice((dropped * r).min(music.len()), music.len())
        } else {
            music.clone()
        };
        let inputs: Vec<usize> = std::iter::once(self.bos()).chain(prefix[dropped..].iter().copied()).collect();
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let logits = self.forward(&mut tape, &vars, &music, genre, &inputs)?;
        let v = tape.value(logits);
        Ok(v.row(v.nrows() - 1).to_vec())
    }

    fn sequence_logits(&self, music: &MusicFeatures, genre: GenreId, target: &[usize]) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let logits = self.forward(&mut tape, &vars, music, genre, &self.inputs_for(target))?;
        Ok(tape.value(logits).clone())
    }
}

/// One training pair: a token sequence and the music/genre it was danced to.
#[derive(Debug, Clone)]
pub struct GptExample {
    pub tokens: TokenSequence,
    pub music: MusicFeatures,
    pub genre: GenreId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GptTrainConfig {
    pub model: TinyGptConfig,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for GptTrainConfig {
    fn default() -> Self {
        Self {
            model: TinyGptConfig::default(),
            steps: 400,
            batch: 4,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GptTrainReport {
    pub losses: Vec<f64>,
    /// Mean NLL over the whole training set after training.
    pub final_nll: f64,
}

/// Crops long examples to the position table, keeping the music aligned.
fn crop(example: &GptExample, max_len: usize, frames_per_token: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, MusicFeatures) {
    let ids = &example.tokens.ids;
    if ids.len() <= max_len {
        return (ids.clone(), example.music.clone());
    }
    let start = rng.gen_range(0..=ids.len() - max_len);
    let a = (start * frames_per_token).min(example.music.len());
    (ids[start..start + max_len].to_vec(), example.music.slice(a, example.music.len()))
}

pub fn train_gpt(examples: &[GptExample], cfg: &GptTrainConfig) -> Result<(TinyGpt, GptTrainReport)> {
    if examples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TinyGpt::new(&mut rng, cfg.model)?;
    let mut opt = AdamW::new(&model.params, cfg.lr, 0.9, 0.98).with_weight_decay(1e-4);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<(Vec<usize>, MusicFeatures, GenreId)> = (0..cfg.batch)
            .map(|_| {
                let ex = &examples[rng.gen_range(0..examples.len())];
                let (ids, music) = crop(ex, cfg.model.max_len, cfg.model.frames_per_token, &mut rng);
                (ids, music, ex.genre)
            })
            .collect();
        let results = batch
            .par_iter()
            .map(|(ids, music, genre)| {
                let mut tape = Tape::new();
                let vars = model.params.attach(&mut tape);
                let loss = model.loss_tape(&mut tape, &vars, music, *genre, ids)?;
                let grads = tape.backward(loss);
                Ok((tape.scalar(loss), model.params.collect_grads(&grads, &vars)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grads: Vec<Array2<f64>> = model.params.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        let mut loss = 0.0;
        for (l, g) in results {
            loss += l / cfg.batch as f64;
            for (acc, gi) in grads.iter_mut().zip(g) {
                *acc += &(gi / cfg.batch as f64);
            }
        }
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { step, loss });
        }
        losses.push(loss);
        clip_grad_norm(&mut grads, 1.0);
        opt.step(&mut model.params, &grads);
        if step % 50 == 0 || step + 1 == cfg.steps {
            info!("gpt step {step}: nll {loss:.4}");
        }
    }
    let mut total = 0.0;
    for ex in examples {
        let (ids, music) = crop(ex, cfg.model.max_len, cfg.model.frames_per_token, &mut rng);
        total += super::gpt_loss(&model, &music, ex.genre, &TokenSequence { ids })?;
    }
    let final_nll = total / examples.len() as f64;
    info!("gpt: final nll {final_nll:.4}");
    Ok((model, GptTrainReport { losses, final_nll }))
}
