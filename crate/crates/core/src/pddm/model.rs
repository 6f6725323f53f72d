//! Trainable reference denoiser and multi-genre discriminator.
//!
//! The denoiser reads one token per frame built from the noisy row, the
//! primitive row, the music row, a genre embedding and a step embedding.
//! After the transformer blocks an intermediate estimate is posed with
//! forward kinematics, foot positions and velocities become a second token
//! stream that predicts contact scores, and one cross-attention block fuses
//! that stream back before the final projection.

use std::fs;
use std::path::Path;

use log::info;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{forward_marginal, BOUNDARY_ROWS, Condition, Denoiser, DiffusionSchedule, LossWeights};
use crate::choreo::GenreId;
use crate::error::{Error, Result};
use crate::motion::skeleton::FOOT_POINTS;
use crate::motion::{Skeleton, CONTACT_COLS, FRAME_DIMS};
use crate::music::FEATURE_DIMS;
use crate::nn::{
    clip_grad_norm, sinusoidal_embedding, AdamW, Attention, LayerNorm, Linear, ParamSet, Tape,
    TransformerBlock, Var,
};

const PDCK_MAGIC: &[u8; 4] = b"PDCK";
const PDCK_VERSION: u32 = 1;
const POSE_DIMS: usize = FRAME_DIMS - CONTACT_COLS.end;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerDenoiserConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub genres: usize,
}

impl Default for TransformerDenoiserConfig {
    fn default() -> Self {
        Self {
            width: 64,
            layers: 2,
            heads: 4,
            genres: 4,
        }
    }
}

/// Poses every frame of `frames` (`n×139`) on the tape; returns one `n×3`
/// position node per joint.
fn fk_tape(tape: &mut Tape, frames: Var, skeleton: &Skeleton) -> Vec<Var> {
    let n = tape.value(frames).nrows();
    let mut rots: Vec<Var> = Vec::with_capacity(skeleton.joint_count());
    let mut pos: Vec<Var> = Vec::with_capacity(skeleton.joint_count());
    for j in 0..skeleton.joint_count() {
        let code = tape.slice_cols(frames, 7 + 6 * j, 13 + 6 * j);
        let local = tape.rot6d_to_mat(code);
        match skeleton.parents[j] {
            None => {
                rots.push(local);
                pos.push(tape.slice_cols(frames, 4, 7));
            }
            Some(p) => {
                let o = skeleton.rest_offsets[j];
                let offset = tape.leaf(Array2::from_shape_fn((n, 3), |(_, k)| o[k]));
                let step = tape.rot_apply(rots[p], offset);
                pos.push(tape.add(pos[p], step));
                rots.push(tape.rot_mul(rots[p], local));
            }
        }
    }
    pos
}

/// Row `i` minus row `i − 1` for `i ≥ 1`, as an `(n−1)×c` node.
fn row_diff(tape: &mut Tape, x: Var) -> Var {
    let n = tape.value(x).nrows();
    let a = tape.slice_rows(x, 1, n);
    let b = tape.slice_rows(x, 0, n - 1);
    tape.sub(a, b)
}

/// Frame-position table for `n` rows.
fn frame_positions(n: usize, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, width));
    for i in 0..n {
        for (k, v) in sinusoidal_embedding(i as f64, width).into_iter().enumerate() {
            out[[i, k]] = v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerDenoiser {
    pub config: TransformerDenoiserConfig,
    pub params: ParamSet,
    pub skeleton: Skeleton,
    in_proj: Linear,
    genre_embedding: usize,
    step_proj: Linear,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    coarse_head: Linear,
    foot_proj: Linear,
    contact_head: Linear,
    fuse_norm: LayerNorm,
    fuse: Attention,
    out_norm: LayerNorm,
    head: Linear,
}

/// Output nodes of one forward pass.
struct Forward {
    d0_hat: Var,
    contacts: Var,
}

/// Inputs and target for one training objective evaluation.
#[derive(Debug, Clone)]
pub struct DenoiseTarget {
    pub d_t: Array2<f64>,
    pub d_p: Array2<f64>,
    pub d0: Array2<f64>,
    pub music: Array2<f64>,
    pub genre: GenreId,
    pub t: usize,
}

impl TransformerDenoiser {
    pub fn new<R: Rng>(rng: &mut R, config: TransformerDenoiserConfig, skeleton: Skeleton) -> Result<Self> {
        if !config.width.is_multiple_of(config.heads) || !config.width.is_multiple_of(2) || config.genres == 0 {
            return Err(Error::Config(format!("invalid denoiser shape {config:?}")));
        }
        let w = config.width;
        let mut params = ParamSet::new();
        let in_proj = Linear::new(&mut params, rng, 2 * FRAME_DIMS + FEATURE_DIMS, w);
        let genre_embedding = params.uniform(rng, config.genres, w, 0.1);
        let step_proj = Linear::new(&mut params, rng, w, w);
        let blocks = (0..config.layers)
            .map(|_| TransformerBlock::new(&mut params, rng, w, config.heads))
            .collect();
        let norm = LayerNorm::new(&mut params, w);
        let coarse_head = Linear::new(&mut params, rng, w, POSE_DIMS);
        let foot_proj = Linear::new(&mut params, rng, 24, w);
        let contact_head = Linear::new(&mut params, rng, w, 4);
        let fuse_norm = LayerNorm::new(&mut params, w);
        let fuse = Attention::new(&mut params, rng, w, w, config.heads);
        let out_norm = LayerNorm::new(&mut params, w);
        let head = Linear::new(&mut params, rng, w, POSE_DIMS);
        // Start from "predict the primitive canvas": zero residual heads.
        for l in [coarse_head, head] {
            params.get_mut(l.weight).mapv_inplace(|v| v * 0.1);
        }
        Ok(Self {
            config,
            params,
            skeleton,
            in_proj,
            genre_embedding,
            step_proj,
            blocks,
            norm,
            coarse_head,
            foot_proj,
            contact_head,
            fuse_norm,
            fuse,
            out_norm,
            head,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        d_t: &Array2<f64>,
        d_p: &Array2<f64>,
        music: &Array2<f64>,
        genre: GenreId,
        t: usize,
    ) -> Result<Forward> {
        let n = d_t.nrows();
        if d_p.dim() != d_t.dim() || d_t.ncols() != FRAME_DIMS || music.dim() != (n, FEATURE_DIMS) || n < 2 {
            return Err(Error::shape(format!(
                "denoiser inputs {:?}, {:?}, music {:?}",
                d_t.dim(),
                d_p.dim(),
                music.dim()
            )));
        }
        if genre.0 >= self.config.genres {
            return Err(Error::data(format!("genre {} out of range", genre.0)));
        }
        let w = self.config.width;
        let xt = tape.leaf(d_t.clone());
        let xp = tape.leaf(d_p.clone());
        let m = tape.leaf(music.clone());
        let m = tape.layer_norm(m);
        let input = tape.concat_cols(&[xt, xp, m]);
        let x = self.in_proj.forward(tape, vars, input);
        let pos = tape.leaf(frame_positions(n, w));
        let x = tape.add(x, pos);
        let g = tape.slice_rows(vars[self.genre_embedding], genre.0, genre.0 + 1);
        let x = tape.add_row(x, g);
        let step = tape.leaf(Array2::from_shape_vec((1, w), sinusoidal_embedding(t as f64, w)).expect("width"));
        let step = self.step_proj.forward(tape, vars, step);
        let mut x = tape.add_row(x, step);
        for block in &self.blocks {
            x = block.forward(tape, vars, x, false);
        }
        let x = self.norm.forward(tape, vars, x);

        // Foot Refine: pose an intermediate estimate and read its feet.
        let base_contacts = tape.slice_cols(xp, 0, CONTACT_COLS.end);
        let base_pose = tape.slice_cols(xp, CONTACT_COLS.end, FRAME_DIMS);
        let coarse = self.coarse_head.forward(tape, vars, x);
        let coarse = tape.add(base_pose, coarse);
        let inter = tape.concat_cols(&[base_contacts, coarse]);
        let joints = fk_tape(tape, inter, &self.skeleton);
        let feet: Vec<Var> = FOOT_POINTS.iter().map(|&j| joints[j]).collect();
        let feet = tape.concat_cols(&feet);
        let prev: Vec<Option<usize>> = (0..n).map(|i| Some(i.saturating_sub(1))).collect();
        let shifted = tape.gather_rows(feet, prev);
        let vel = tape.sub(feet, shifted);
        let vel = tape.scale(vel, crate::motion::DEFAULT_FPS);
        let foot_in = tape.concat_cols(&[feet, vel]);
        let f = self.foot_proj.forward(tape, vars, foot_in);
        let f = tape.relu(f);
        let logits = self.contact_head.forward(tape, vars, f);
        let contacts = tape.sigmoid(logits);

        let h = self.fuse_norm.forward(tape, vars, x);
        let a = self.fuse.forward(tape, vars, h, f, false);
        let x = tape.add(x, a);
        let x = self.out_norm.forward(tape, vars, x);
        let residual = self.head.forward(tape, vars, x);
        let pose = tape.add(base_pose, residual);
        let d0_hat = tape.concat_cols(&[contacts, pose]);
        Ok(Forward { d0_hat, contacts })
    }

    /// Weighted training objective without the adversarial term. Matches
    /// [`super::losses`] on the forward values.
    pub fn objective(&self, tape: &mut Tape, vars: &[Var], target: &DenoiseTarget, weights: &LossWeights) -> Result<(Var, Var)> {
        let out = self.forward(tape, vars, &target.d_t, &target.d_p, &target.music, target.genre, target.t)?;
        let n = target.d0.nrows();
        if target.d0.dim() != target.d_t.dim() || n < 3 {
            return Err(Error::shape(format!("target {:?}", target.d0.dim())));
        }
        let d0 = tape.leaf(target.d0.clone());
        let err = tape.sub(out.d0_hat, d0);
        let mut total = tape.mean_squares(err);
        let joints_hat = fk_tape(tape, out.d0_hat, &self.skeleton);
        let joints = fk_tape(tape, d0, &self.skeleton);
        let per_joint = 1.0 / joints.len() as f64;
        for (order, weight) in [(0, weights.joint), (1, weights.velocity), (2, weights.acceleration)] {
            if weight == 0.0 {
                continue;
            }
            for (&ph, &p) in joints_hat.iter().zip(&joints) {
                let (mut a, mut b) = (ph, p);
                for _ in 0..order {
                    a = row_diff(tape, a);
                    b = row_diff(tape, b);
                }
                let e = tape.sub(a, b);
                let e = tape.mean_squares(e);
                let e = tape.scale(e, weight * per_joint);
                total = tape.add(total, e);
            }
        }
        if weights.contact != 0.0 {
            let ones = tape.leaf(Array2::ones((3, 1)));
            for (k, &j) in FOOT_POINTS.iter().enumerate() {
                let disp = row_diff(tape, joints_hat[j]);
                let sq = tape.mul(disp, disp);
                let sq = tape.matmul(sq, ones);
                let c = tape.slice_cols(out.contacts, k, k + 1);
                let c = tape.slice_rows(c, 1, n);
                let e = tape.mul(sq, c);
                let e = tape.sum(e);
                let e = tape.scale(e, weights.contact / (4 * (n - 1)) as f64);
                total = tape.add(total, e);
            }
        }
        Ok((total, out.d0_hat))
    }

    pub fn to_bytes(&self, discriminator: Option<&Discriminator>) -> Vec<u8> {
        let c = &self.config;
        let disc_count = discriminator.map_or(0, |d| d.params.scalar_count());
        let mut out = Vec::new();
        out.extend_from_slice(PDCK_MAGIC);
        for v in [PDCK_VERSION as usize, c.width, c.layers, c.heads, c.genres, disc_count] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let mut values = self.params.flatten();
        if let Some(d) = discriminator {
            values.extend(d.params.flatten());
        }
        for v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    /// Reads a checkpoint; the discriminator is returned when one was stored.
    pub fn from_bytes(bytes: &[u8], skeleton: Skeleton) -> Result<(Self, Option<Discriminator>)> {
        if bytes.len() < 28 || &bytes[..4] != PDCK_MAGIC {
            return Err(Error::data("missing PDCK header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        if word(1) != PDCK_VERSION as usize {
            return Err(Error::data(format!("unsupported pdck version {}", word(1))));
        }
        let config = TransformerDenoiserConfig {
            width: word(2),
            layers: word(3),
            heads: word(4),
            genres: word(5),
        };
        let disc_count = word(6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(&mut rng, config, skeleton)?;
        let mut disc = (disc_count > 0).then(|| Discriminator::new(&mut rng, config.width, config.genres));
        let own = model.params.scalar_count();
        let expected = own + disc.as_ref().map_or(0, |d| d.params.scalar_count());
        if disc_count > 0 && expected - own != disc_count {
            return Err(Error::data("pdck discriminator size does not match its shape"));
        }
        let values = crate::motion::io::decode_f32s(&bytes[28..], expected)?;
        model.params.load_flat(&values[..own]).expect("sized by decode");
        if let Some(d) = disc.as_mut() {
            d.params.load_flat(&values[own..]).expect("sized by decode");
        }
        Ok((model, disc))
    }

    pub fn save(&self, path: &Path, discriminator: Option<&Discriminator>) -> Result<()> {
        fs::write(path, self.to_bytes(discriminator)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, skeleton: Skeleton) -> Result<(Self, Option<Discriminator>)> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?, skeleton)
    }
}

impl Denoiser for TransformerDenoiser {
    fn denoise(&self, d_t: &Array2<f64>, d_p: &Array2<f64>, cond: &Condition, t: usize) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let out = self.forward(&mut tape, &vars, d_t, d_p, &cond.music, cond.genre, t)?;
        Ok(tape.value(out.d0_hat).clone())
    }
}

/// Multi-genre discriminator: probability that a motion is a real dance of
/// the given genre to the given music.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub params: ParamSet,
    frame_proj: Linear,
    genre_embedding: usize,
    head: Linear,
}

impl Discriminator {
    pub fn new<R: Rng>(rng: &mut R, width: usize, genres: usize) -> Self {
        let mut params = ParamSet::new();
        let frame_proj = Linear::new(&mut params, rng, FRAME_DIMS + FEATURE_DIMS, width);
        let genre_embedding = params.uniform(rng, genres.max(1), width, 0.1);
        let head = Linear::new(&mut params, rng, width, 1);
        Self {
            params,
            frame_proj,
            genre_embedding,
            head,
        }
    }

    /// Pre-sigmoid score node.
    pub fn logit(&self, tape: &mut Tape, vars: &[Var], motion: Var, music: &Array2<f64>, genre: GenreId) -> Var {
        let m = tape.leaf(music.clone());
        let m = tape.layer_norm(m);
        let x = tape.concat_cols(&[motion, m]);
        let h = self.frame_proj.forward(tape, vars, x);
        let h = tape.relu(h);
        let h = tape.mean_rows(h);
        let g = tape.slice_rows(vars[self.genre_embedding], genre.0, genre.0 + 1);
        let h = tape.add(h, g);
        let h = tape.relu(h);
        self.head.forward(tape, vars, h)
    }

    pub fn probability(&self, motion: &Array2<f64>, music: &Array2<f64>, genre: GenreId) -> f64 {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let x = tape.leaf(motion.clone());
        let z = self.logit(&mut tape, &vars, x, music, genre);
        let p = tape.sigmoid(z);
        tape.scalar(p)
    }
}

/// A full-length training sequence with its primitive canvas (already hold-filled).
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub motion: Array2<f64>,
    pub prior: Array2<f64>,
    pub music: Array2<f64>,
    pub genre: GenreId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PddmTrainConfig {
    pub model: TransformerDenoiserConfig,
    pub schedule: DiffusionSchedule,
    pub weights: LossWeights,
    pub steps: usize,
    pub batch: usize,
    /// Frames per training window.
    pub window: usize,
    pub lr: f64,
    pub seed: u64,
    pub adversarial: bool,
}

impl Default for PddmTrainConfig {
    fn default() -> Self {
        Self {
            model: TransformerDenoiserConfig::default(),
            schedule: DiffusionSchedule::default(),
            weights: LossWeights::default(),
            steps: 300,
            batch: 4,
            window: 32,
            lr: 2e-3,
            seed: 0,
            adversarial: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PddmTrainReport {
    /// Weighted objective per step.
    pub losses: Vec<f64>,
    /// Reconstruction term per step.
    pub recon: Vec<f64>,
}

/// Draws a window, a step and a noisy input. Boundary rows are pinned to the
/// clean motion half of the time on each side, as sampling does.
fn draw_target(examples: &[TrainExample], cfg: &PddmTrainConfig, rng: &mut ChaCha8Rng) -> Result<DenoiseTarget> {
    let ex = &examples[rng.gen_range(0..examples.len())];
    let len = ex.motion.nrows();
    let w = cfg.window.min(len);
    let start = rng.gen_range(0..=len - w);
    let rows = start..start + w;
    let d0 = ex.motion.slice(s![rows.clone(), ..]).to_owned();
    let d_p = ex.prior.slice(s![rows.clone(), ..]).to_owned();
    let t = rng.gen_range(1..=cfg.schedule.steps);
    let mut d_t = forward_marginal(&d0, &d_p, t, &cfg.schedule, rng)?;
    if rng.gen_bool(0.5) {
        d_t.slice_mut(s![..BOUNDARY_ROWS, ..]).assign(&d0.slice(s![..BOUNDARY_ROWS, ..]));
    }
    if rng.gen_bool(0.5) {
        d_t.slice_mut(s![w - BOUNDARY_ROWS.., ..]).assign(&d0.slice(s![w - BOUNDARY_ROWS.., ..]));
    }
    Ok(DenoiseTarget {
        d_t,
        d_p,
        d0,
        music: ex.music.slice(s![rows, ..]).to_owned(),
        genre: ex.genre,
        t,
    })
}

fn mean_grads(parts: Vec<Vec<Array2<f64>>>, like: &ParamSet) -> Vec<Array2<f64>> {
    let count = parts.len().max(1) as f64;
    let mut acc: Vec<Array2<f64>> = like.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
    for g in parts {
        for (a, gi) in acc.iter_mut().zip(g) {
            a.scaled_add(1.0 / count, &gi);
        }
    }
    acc
}

/// Trains the denoiser (and, if enabled, the discriminator alternately).
pub fn train_pddm(
    examples: &[TrainExample],
    skeleton: &Skeleton,
    cfg: &PddmTrainConfig,
) -> Result<(TransformerDenoiser, Discriminator, PddmTrainReport)> {
    if examples.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    if let Some(ex) = examples.iter().find(|e| e.motion.nrows() < 2 * BOUNDARY_ROWS.max(2) || e.prior.dim() != e.motion.dim()) {
        return Err(Error::shape(format!("training example {:?} / prior {:?}", ex.motion.dim(), ex.prior.dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TransformerDenoiser::new(&mut rng, cfg.model, skeleton.clone())?;
    let mut disc = Discriminator::new(&mut rng, cfg.model.width, cfg.model.genres);
    let mut opt = AdamW::new(&model.params, cfg.lr, 0.9, 0.99).with_weight_decay(1e-4);
    let mut disc_opt = AdamW::new(&disc.params, cfg.lr, 0.5, 0.99);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut recon = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let targets: Vec<DenoiseTarget> = (0..cfg.batch.max(1))
            .map(|_| draw_target(examples, cfg, &mut rng))
            .collect::<Result<_>>()?;
        let results = targets
            .par_iter()
            .map(|target| {
                let mut tape = Tape::new();
                let vars = model.params.attach(&mut tape);
                let (objective, d0_hat) = model.objective(&mut tape, &vars, target, &cfg.weights)?;
                let d0 = tape.value(d0_hat).clone();
                let err = &d0 - &target.d0;
                let rec = err.mapv(|v| v * v).mean().unwrap_or(0.0);
                let mut root = objective;
                if cfg.adversarial && cfg.weights.genre > 0.0 {
                    let dvars = disc.params.attach(&mut tape);
                    let z = disc.logit(&mut tape, &dvars, d0_hat, &target.music, target.genre);
                    let nz = tape.scale(z, -1.0);
                    let fool = tape.softplus(nz);
                    let fool = tape.scale(fool, cfg.weights.genre);
                    root = tape.add(root, fool);
                }
                let grads = tape.backward(root);
                Ok((tape.scalar(objective), rec, model.params.collect_grads(&grads, &vars), d0))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = results.len() as f64;
        let loss: f64 = results.iter().map(|r| r.0).sum::<f64>() / count;
        let rec: f64 = results.iter().map(|r| r.1).sum::<f64>() / count;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { step, loss });
        }
        losses.push(loss);
        recon.push(rec);
        let fakes: Vec<Array2<f64>> = results.iter().map(|r| r.3.clone()).collect();
        let mut grads = mean_grads(results.into_iter().map(|r| r.2).collect(), &model.params);
        clip_grad_norm(&mut grads, 1.0);
        opt.step(&mut model.params, &grads);

        if cfg.adversarial && cfg.weights.genre > 0.0 {
            let parts: Vec<Vec<Array2<f64>>> = targets
                .par_iter()
                .zip(fakes.par_iter())
                .map(|(target, fake)| {
                    let mut tape = Tape::new();
                    let vars = disc.params.attach(&mut tape);
                    let real = tape.leaf(target.d0.clone());
                    let fake = tape.leaf(fake.clone());
                    let zr = disc.logit(&mut tape, &vars, real, &target.music, target.genre);
                    let zf = disc.logit(&mut tape, &vars, fake, &target.music, target.genre);
                    let nzr = tape.scale(zr, -1.0);
                    let lr = tape.softplus(nzr);
                    let lf = tape.softplus(zf);
                    let l = tape.add(lr, lf);
                    let grads = tape.backward(l);
                    disc.params.collect_grads(&grads, &vars)
                })
                .collect();
            let mut dgrads = mean_grads(parts, &disc.params);
            clip_grad_norm(&mut dgrads, 1.0);
            disc_opt.step(&mut disc.params, &dgrads);
        }
        if step % 50 == 0 || step + 1 == cfg.steps {
            info!("pddm step {step}: loss {loss:.5} recon {rec:.5}");
        }
    }
    Ok((model, disc, PddmTrainReport { losses, recon }))
}
