//! Training objective terms, evaluated on plain arrays. The trainer builds
//! the same terms on the autodiff tape; these versions are the reference.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::motion::skeleton::FOOT_POINTS;
use crate::motion::{Pose, Skeleton, FRAME_DIMS};

/// Relative weights of the auxiliary terms; reconstruction has weight one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub joint: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub contact: f64,
    pub genre: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            joint: 1.0,
            velocity: 1.0,
            acceleration: 1.0,
            contact: 10.0,
            genre: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub joint: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub contact: f64,
    /// Weighted sum of the terms above (the genre term is added by the trainer).
    pub total: f64,
}

fn positions(d: &Array2<f64>, skeleton: &Skeleton) -> Result<Array3<f64>> {
    let n = skeleton.joint_count();
    let mut out = Array3::zeros((d.nrows(), n, 3));
    for (i, row) in d.outer_iter().enumerate() {
        let pose = Pose::from_frame(row, skeleton)?;
        for (j, p) in pose.positions.iter().enumerate() {
            for k in 0..3 {
                out[[i, j, k]] = p[k];
            }
        }
    }
    Ok(out)
}

fn mean_sq_diff(a: &Array3<f64>, b: &Array3<f64>, order: usize) -> f64 {
    let diff = |x: &Array3<f64>| -> Array3<f64> {
        let mut x = x.clone();
        for _ in 0..order {
            let len = x.dim().0;
            x = &x.slice(ndarray::s![1..len, .., ..]) - &x.slice(ndarray::s![..len - 1, .., ..]);
        }
        x
    };
    let (da, db) = (diff(a), diff(b));
    let n = da.len().max(1) as f64;
    (&da - &db).mapv(|v| v * v).sum() / n
}

/// Every term on per-frame units: positions in meters, velocities and
/// accelerations as first and second frame differences. `contact_pred` is
/// `n×4` in foot-point order and masks the squared per-frame displacement of
/// the predicted foot points.
pub fn losses(
    d0: &Array2<f64>,
    d0_hat: &Array2<f64>,
    contact_pred: &Array2<f64>,
    skeleton: &Skeleton,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let n = d0.nrows();
    if d0.dim() != d0_hat.dim() || d0.ncols() != FRAME_DIMS || contact_pred.dim() != (n, 4) {
        return Err(Error::shape(format!(
            "losses over {:?}, {:?} and contacts {:?}",
            d0.dim(),
            d0_hat.dim(),
            contact_pred.dim()
        )));
    }
    if n < 3 {
        return Err(Error::SequenceTooShort { need: 3, got: n });
    }
    let recon = (d0_hat - d0).mapv(|v| v * v).mean().unwrap_or(0.0);
    let (p, p_hat) = (positions(d0, skeleton)?, positions(d0_hat, skeleton)?);
    let joint = mean_sq_diff(&p_hat, &p, 0);
    let velocity = mean_sq_diff(&p_hat, &p, 1);
    let acceleration = mean_sq_diff(&p_hat, &p, 2);
    let mut contact = 0.0;
    for i in 1..n {
        for (k, &j) in FOOT_POINTS.iter().enumerate() {
            let v2: f64 = (0..3).map(|a| (p_hat[[i, j, a]] - p_hat[[i - 1, j, a]]).powi(2)).sum();
            contact += contact_pred[[i, k]] * v2;
        }
    }
    contact /= (4 * (n - 1)) as f64;
    let total = recon
        + weights.joint * joint
        + weights.velocity * velocity
        + weights.acceleration * acceleration
        + weights.contact * contact;
    Ok(LossBreakdown {
        recon,
        joint,
        velocity,
        acceleration,
        contact,
        total,
    })
}

const PROB_FLOOR: f64 = 1e-7;

/// Discriminator objective `log D(real) + log(1 − D(fake))`, inputs clamped
/// to `[1e-7, 1 − 1e-7]`.
pub fn genre_adv_loss(disc_real: f64, disc_fake: f64) -> f64 {
    let clamp = |p: f64| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    clamp(disc_real).ln() + (1.0 - clamp(disc_fake)).ln()
}
