//! Primitive-based residual-shifting diffusion.
//!
//! The forward process moves a clean segment `d0` toward the primitive canvas
//! `d_p` while adding noise; sampling starts near `d_p` and walks back with a
//! pluggable [`Denoiser`]. Long sequences are cut into segments of `n` frames
//! that are sampled independently and stitched through shared boundary
//! windows.

mod guidance;
mod losses;
mod model;

pub use guidance::{apply_guidance, contact_grad, contact_loss, leg_dof_mask, Guidance, DEFAULT_A_CON, DEFAULT_A_PENE};
pub use losses::{genre_adv_loss, losses, LossBreakdown, LossWeights};
pub use model::{
    train_pddm, DenoiseTarget, Discriminator, PddmTrainConfig, PddmTrainReport, TrainExample, TransformerDenoiser,
    TransformerDenoiserConfig,
};

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::choreo::{build_primitive_canvas, DancePrimitives, HALF_WINDOW};
use crate::choreo::GenreId;
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, CONTACT_COLS, FRAME_DIMS};
use crate::music::MusicFeatures;

/// Default segment length.
pub const SEGMENT_FRAMES: usize = 128;
/// Rows pinned at each end of a segment by boundary mixing.
pub const BOUNDARY_ROWS: usize = HALF_WINDOW;

/// Noise schedule. `eta` and `alpha` are indexed by step `0..=T`;
/// `eta[0] = 0` and `alpha[0]` is unused (zero).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub eta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub k: f64,
}

/// Schedule values live on the `2^-53` grid so every difference and every
/// partial sum of `alpha` is exact.
fn on_grid(x: f64) -> f64 {
    const SCALE: f64 = (1u64 << 53) as f64;
    (x * SCALE).round() / SCALE
}

/// Geometric `eta` between `eta1` and `eta_t`, warped by exponent `p`.
pub fn make_schedule(steps: usize, eta1: f64, eta_t: f64, p: f64, k: f64) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(Error::InvalidSchedule(format!("need at least 2 steps, got {steps}")));
    }
    if !(eta1 > 0.0 && eta1 < eta_t && eta_t <= 1.0) {
        return Err(Error::InvalidSchedule(format!("need 0 < eta1 < etaT <= 1, got {eta1}, {eta_t}")));
    }
    if !(p > 0.0 && p.is_finite()) || !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidSchedule(format!("p and k must be positive, got {p}, {k}")));
    }
    let mut eta = vec![0.0; steps + 1];
    let ratio = eta_t / eta1;
    for (t, e) in eta.iter_mut().enumerate().skip(1) {
        let u = ((t - 1) as f64 / (steps - 1) as f64).powf(p);
        *e = on_grid(eta1 * ratio.powf(u));
    }
    eta[steps] = on_grid(eta_t);
    if eta.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSchedule("eta is not strictly increasing".into()));
    }
    let mut alpha = vec![0.0; steps + 1];
    for t in 1..=steps {
        alpha[t] = eta[t] - eta[t - 1];
    }
    Ok(DiffusionSchedule { steps, eta, alpha, k })
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        make_schedule(50, 1e-3, 0.999, 1.0, 0.1).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    /// Same trajectory with a different noise scale. Unlike
    /// [`make_schedule`] this accepts `k = 0`, the noiseless limit.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::InvalidSchedule(format!("k must be non-negative, got {k}")));
        }
        Ok(Self { k, ..self.clone() })
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::InvalidSchedule(format!("step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// Variance of the reverse kernel at step `t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.k * self.k * self.eta[t - 1] / self.eta[t] * self.alpha[t]
    }
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn noise<R: Rng>(rng: &mut R, dim: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal))
}

/// Samples `d_t ~ N(d0 + eta_t (dp − d0), k² eta_t I)`.
pub fn forward_marginal<R: Rng>(
    d0: &Array2<f64>,
    dp: &Array2<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Array2<f64>> {
    same_shape(d0, dp)?;
    schedule.check_step(t)?;
    let eta = schedule.eta[t];
    let eps = noise(rng, d0.dim());
    Ok(d0 + &((dp - d0) * eta) + &(eps * (schedule.k * eta.sqrt())))
}

/// One forward transition: `d_prev + alpha_t d_res + k sqrt(alpha_t) ε`.
pub fn forward_step<R: Rng>(
    d_prev: &Array2<f64>,
    d_res: &Array2<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Array2<f64>> {
    same_shape(d_prev, d_res)?;
    schedule.check_step(t)?;
    let a = schedule.alpha[t];
    let eps = noise(rng, d_prev.dim());
    Ok(d_prev + &(d_res * a) + &(eps * (schedule.k * a.sqrt())))
}

/// Mean of `q(d_{t−1} | d_t, d0_hat)`; at `t = 1` this is `d0_hat` itself.
pub fn posterior_mean(
    d_t: &Array2<f64>,
    d0_hat: &Array2<f64>,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<Array2<f64>> {
    same_shape(d_t, d0_hat)?;
    schedule.check_step(t)?;
    if t == 1 {
        return Ok(d0_hat.clone());
    }
    let (eta, prev, a) = (schedule.eta[t], schedule.eta[t - 1], schedule.alpha[t]);
    Ok(d_t * (prev / eta) + &(d0_hat * (a / eta)))
}

/// Starting state `d_T = d_p + k ε`.
pub fn init_from_primitives<R: Rng>(dp: &Array2<f64>, schedule: &DiffusionSchedule, rng: &mut R) -> Array2<f64> {
    dp + &(noise(rng, dp.dim()) * schedule.k)
}

/// Overwrites the first and last [`BOUNDARY_ROWS`] rows with the given fixes.
pub fn mix_boundary<'a>(
    d: &mut Array2<f64>,
    head_fix: Option<ArrayView2<'a, f64>>,
    tail_fix: Option<ArrayView2<'a, f64>>,
) -> Result<()> {
    let n = d.nrows();
    for fix in [head_fix, tail_fix].into_iter().flatten() {
        if fix.dim() != (BOUNDARY_ROWS, d.ncols()) || n < BOUNDARY_ROWS {
            return Err(Error::shape(format!(
                "boundary fix {:?} does not fit a {n}-row segment",
                fix.dim()
            )));
        }
    }
    if let Some(h) = head_fix {
        d.slice_mut(s![..BOUNDARY_ROWS, ..]).assign(&h);
    }
    if let Some(t) = tail_fix {
        d.slice_mut(s![n - BOUNDARY_ROWS.., ..]).assign(&t);
    }
    Ok(())
}

/// Conditioning for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub music: Array2<f64>,
    pub genre: GenreId,
    /// Position of the segment's first row in the long sequence.
    pub start_frame: usize,
}

/// Predicts the clean segment from a noisy one. Implementations must be
/// deterministic and return finite values of the input shape.
pub trait Denoiser: Sync {
    fn denoise(&self, d_t: &Array2<f64>, d_p: &Array2<f64>, cond: &Condition, t: usize) -> Result<Array2<f64>>;
}

/// Returns the matching rows of a known clean sequence, whatever the input.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub reference: Array2<f64>,
}

impl OracleDenoiser {
    pub fn new(reference: Array2<f64>) -> Self {
        Self { reference }
    }
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, d_t: &Array2<f64>, _d_p: &Array2<f64>, cond: &Condition, _t: usize) -> Result<Array2<f64>> {
        let (n, dims) = d_t.dim();
        let end = cond.start_frame + n;
        if end > self.reference.nrows() || dims != self.reference.ncols() {
            return Err(Error::shape(format!(
                "oracle reference {:?} cannot serve rows {}..{end} of width {dims}",
                self.reference.dim(),
                cond.start_frame
            )));
        }
        Ok(self.reference.slice(s![cond.start_frame..end, ..]).to_owned())
    }
}

/// One reverse transition `d_t → d_{t−1}`.
#[allow(clippy::too_many_arguments)]
pub fn denoise_step<R: Rng>(
    d_t: &Array2<f64>,
    dp: &Array2<f64>,
    cond: &Condition,
    t: usize,
    schedule: &DiffusionSchedule,
    denoiser: &dyn Denoiser,
    guidance: Option<&Guidance>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    let mut d0_hat = denoiser.denoise(d_t, dp, cond, t)?;
    same_shape(d_t, &d0_hat)?;
    if !d0_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::ModelFailure(format!("denoiser output at step {t}")));
    }
    if let Some(g) = guidance.filter(|g| t <= g.start_step) {
        d0_hat = apply_guidance(&d0_hat, g.a_con, g.a_pene, &g.skeleton);
    }
    let mean = posterior_mean(d_t, &d0_hat, t, schedule)?;
    if t == 1 {
        return Ok(mean);
    }
    let std = schedule.posterior_variance(t).sqrt();
    Ok(mean + &(noise(rng, d_t.dim()) * std))
}

/// Everything needed to sample one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEntry {
    pub d_p: Array2<f64>,
    pub cond: Condition,
    pub head_fix: Option<Array2<f64>>,
    pub tail_fix: Option<Array2<f64>>,
    /// Rows reset to `d_p` at every step (key motions under hard mixing).
    pub pinned_rows: Vec<usize>,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    pub segment_length: usize,
    pub entries: Vec<SegmentEntry>,
}

fn pin(d: &mut Array2<f64>, entry: &SegmentEntry) -> Result<()> {
    for &r in &entry.pinned_rows {
        d.row_mut(r).assign(&entry.d_p.row(r));
    }
    mix_boundary(d, entry.head_fix.as_ref().map(|a| a.view()), entry.tail_fix.as_ref().map(|a| a.view()))
}

/// Full reverse chain for one segment, seeded from the entry's own stream.
pub fn sample_segment(
    entry: &SegmentEntry,
    schedule: &DiffusionSchedule,
    denoiser: &dyn Denoiser,
    guidance: Option<&Guidance>,
) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(entry.seed);
    rng.set_stream(entry.stream);
    let mut d = init_from_primitives(&entry.d_p, schedule, &mut rng);
    for t in (1..=schedule.steps).rev() {
        pin(&mut d, entry)?;
        d = denoise_step(&d, &entry.d_p, &entry.cond, t, schedule, denoiser, guidance, &mut rng)?;
    }
    pin(&mut d, entry)?;
    Ok(d)
}

/// The standing identity pose used where a segment has no primitive at all.
fn neutral_row() -> ndarray::Array1<f64> {
    MotionSequence::rest_pose(1).data.row(0).to_owned()
}

/// Fills unmasked rows of a segment with the nearest masked row of the same
/// segment (ties to the earlier row), or the neutral pose if none is masked.
pub fn hold_fill(canvas: ArrayView2<'_, f64>, mask: &[bool]) -> Array2<f64> {
    let mut out = canvas.to_owned();
    let masked: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if masked.is_empty() {
        let neutral = neutral_row();
        for mut row in out.outer_iter_mut() {
            row.assign(&neutral);
        }
        return out;
    }
    for i in (0..mask.len()).filter(|&i| !mask[i]) {
        let pos = masked.partition_point(|&m| m < i);
        let before = pos.checked_sub(1).map(|p| masked[p]);
        let after = masked.get(pos).copied();
        let src = match (before, after) {
            (Some(b), Some(a)) => {
                if i - b <= a - i {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("masked is non-empty"),
        };
        let row = canvas.row(src).to_owned();
        out.row_mut(i).assign(&row);
    }
    out
}

/// Long-sequence sampling options.
#[derive(Debug, Clone)]
pub struct LongOptions {
    pub segment_length: usize,
    pub worker_count: usize,
    pub seed: u64,
    pub guidance: Option<Guidance>,
    /// Pin key-motion rows at every step instead of only seeding `d_T`.
    pub hard_key_motions: bool,
}

impl Default for LongOptions {
    fn default() -> Self {
        Self {
            segment_length: SEGMENT_FRAMES,
            worker_count: 1,
            seed: 0,
            guidance: None,
            hard_key_motions: false,
        }
    }
}

/// Splits `music` (already a multiple of `n` long) into segment entries.
pub fn build_plan(
    music: &MusicFeatures,
    genre: GenreId,
    primitives: &DancePrimitives,
    options: &LongOptions,
) -> Result<SegmentPlan> {
    let n = options.segment_length;
    let len = music.len();
    if n < 2 * BOUNDARY_ROWS || len == 0 || !len.is_multiple_of(n) {
        return Err(Error::shape(format!("music length {len} is not a positive multiple of {n}")));
    }
    let (canvas, mask) = build_primitive_canvas(primitives, len, n)?;
    let boundary = |i: usize| primitives.boundary_motions.iter().find(|b| b.boundary == i);
    let mut key_mask = vec![false; len];
    for k in &primitives.key_motions {
        key_mask[k.target_frame - HALF_WINDOW..k.target_frame + HALF_WINDOW].fill(true);
    }
    let entries = (0..len / n)
        .map(|i| {
            let rows = i * n..(i + 1) * n;
            let d_p = hold_fill(canvas.slice(s![rows.clone(), ..]), &mask[rows.clone()]);
            let pinned_rows = if options.hard_key_motions {
                (0..n).filter(|&r| key_mask[i * n + r]).collect()
            } else {
                Vec::new()
            };
            SegmentEntry {
                d_p,
                cond: Condition {
                    music: music.data.slice(s![rows, ..]).to_owned(),
                    genre,
                    start_frame: i * n,
                },
                head_fix: boundary(i).map(|b| b.frames.slice(s![HALF_WINDOW.., ..]).to_owned()),
                tail_fix: boundary(i + 1).map(|b| b.frames.slice(s![..HALF_WINDOW, ..]).to_owned()),
                pinned_rows,
                seed: options.seed,
                stream: i as u64,
            }
        })
        .collect();
    Ok(SegmentPlan { segment_length: n, entries })
}

/// Samples every segment of `plan` on a pool of `worker_count` threads and
/// concatenates them.
pub fn sample_plan(
    plan: &SegmentPlan,
    schedule: &DiffusionSchedule,
    denoiser: &dyn Denoiser,
    guidance: Option<&Guidance>,
    worker_count: usize,
) -> Result<Array2<f64>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let segments: Vec<Array2<f64>> = pool.install(|| {
        plan.entries
            .par_iter()
            .map(|e| sample_segment(e, schedule, denoiser, guidance))
            .collect::<Result<_>>()
    })?;
    let views: Vec<_> = segments.iter().map(|a| a.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, FRAME_DIMS)));
    }
    Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("segments share a width"))
}

/// Generates a dance for music of any length. Music is padded by repetition
/// to a whole number of segments and the result is cut back to the music
/// length. Output contact columns are clamped to `[0, 1]`.
pub fn generate_long(
    music: &MusicFeatures,
    genre: GenreId,
    primitives: &DancePrimitives,
    schedule: &DiffusionSchedule,
    denoiser: &dyn Denoiser,
    options: &LongOptions,
) -> Result<MotionSequence> {
    let n = options.segment_length;
    let len = music.len();
    if len == 0 || n == 0 {
        return Err(Error::SequenceTooShort { need: n.max(1), got: len });
    }
    let padded = music.padded_by_repetition(len.div_ceil(n) * n)?;
    let plan = build_plan(&padded, genre, primitives, options)?;
    let mut data = sample_plan(&plan, schedule, denoiser, options.guidance.as_ref(), options.worker_count)?;
    data = data.slice(s![..len, ..]).to_owned();
    for c in CONTACT_COLS {
        data.column_mut(c).mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    MotionSequence::new(music.fps, data)
}
