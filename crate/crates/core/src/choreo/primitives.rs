use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{joint_speed, MotionSequence, Skeleton, FRAME_DIMS};
use crate::music::BeatGrid;

/// Frames in one dance primitive window.
pub const PRIMITIVE_FRAMES: usize = 8;
pub const HALF_WINDOW: usize = PRIMITIVE_FRAMES / 2;
/// Moving-average width applied to the joint speed curve.
pub const SMOOTHING_WINDOW: usize = 5;
/// Minimum spacing between accepted dance beats, in frames.
pub const BEAT_MIN_SEPARATION: usize = 10;
const MIN_BEAT_FRAMES: usize = 16;

/// An expressive window re-timed onto a music beat: rows cover
/// `[target_frame − 4, target_frame + 4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMotion {
    pub target_frame: usize,
    pub frames: Array2<f64>,
}

/// A window straddling a segment boundary: rows cover `[i·n − 4, i·n + 4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMotion {
    pub boundary: usize,
    pub frames: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DancePrimitives {
    pub key_motions: Vec<KeyMotion>,
    pub boundary_motions: Vec<BoundaryMotion>,
}

#[derive(Serialize, Deserialize)]
struct KeyJson {
    target: usize,
    frames: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BoundaryJson {
    boundary: usize,
    frames: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PrimitivesJson {
    key_motions: Vec<KeyJson>,
    boundary_motions: Vec<BoundaryJson>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn window(frames: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    if frames.len() != PRIMITIVE_FRAMES || frames.iter().any(|f| f.len() != FRAME_DIMS) {
        return Err(Error::shape(format!(
            "primitive windows must be {PRIMITIVE_FRAMES}×{FRAME_DIMS}"
        )));
    }
    Ok(Array2::from_shape_vec((PRIMITIVE_FRAMES, FRAME_DIMS), frames.concat()).expect("checked"))
}

impl DancePrimitives {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PrimitivesJson {
            key_motions: self
                .key_motions
                .iter()
                .map(|k| KeyJson {
                    target: k.target_frame,
                    frames: rows(&k.frames),
                })
                .collect(),
            boundary_motions: self
                .boundary_motions
                .iter()
                .map(|b| BoundaryJson {
                    boundary: b.boundary,
                    frames: rows(&b.frames),
                })
                .collect(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PrimitivesJson = serde_json::from_str(text)?;
        Ok(Self {
            key_motions: doc
                .key_motions
                .into_iter()
                .map(|k| Ok(KeyMotion { target_frame: k.target, frames: window(k.frames)? }))
                .collect::<Result<_>>()?,
            boundary_motions: doc
                .boundary_motions
                .into_iter()
                .map(|b| Ok(BoundaryMotion { boundary: b.boundary, frames: window(b.frames)? }))
                .collect::<Result<_>>()?,
        })
    }
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(x.len());
            x[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Dance beats from a speed curve: interior local minima of the smoothed
/// curve (a flat run counts once, at its centre) lying below the median,
/// thinned greedily from the deepest so accepted beats are at least
/// [`BEAT_MIN_SEPARATION`] frames apart.
pub fn speed_minima(speed: &[f64]) -> Vec<usize> {
    let smooth = moving_average(speed, SMOOTHING_WINDOW);
    let n = smooth.len();
    let mut sorted = smooth.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mut candidates = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        let mut j = i;
        while j + 1 < n && smooth[j + 1] == smooth[i] {
            j += 1;
        }
        if j + 1 < n && smooth[i - 1] > smooth[i] && smooth[j + 1] > smooth[i] && smooth[i] < median {
            candidates.push((i + j) / 2);
        }
        i = j + 1;
    }
    candidates.sort_by(|&a, &b| smooth[a].total_cmp(&smooth[b]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| a.abs_diff(c) >= BEAT_MIN_SEPARATION) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Minima of the smoothed joint speed of a full-body sequence.
pub fn detect_dance_beats(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Vec<usize>> {
    if seq.len() < MIN_BEAT_FRAMES {
        return Err(Error::SequenceTooShort {
            need: MIN_BEAT_FRAMES,
            got: seq.len(),
        });
    }
    Ok(speed_minima(&joint_speed(seq, skeleton)?))
}

fn overlaps(a: usize, b: usize) -> bool {
    // Windows [a−4, a+4) and [b−4, b+4) intersect iff centres are under 8 apart.
    a.abs_diff(b) < PRIMITIVE_FRAMES
}

/// Primitives from known dance beats. Key motions are dropped when their
/// source or re-timed window leaves the sequence, when the re-timed window
/// touches a boundary window, or when an earlier key motion already took the
/// same music beat.
pub fn primitives_from_beats(
    seq: &MotionSequence,
    dance_beats: &[usize],
    music_beats: &BeatGrid,
    n: usize,
) -> Result<DancePrimitives> {
    let len = seq.len();
    if n < PRIMITIVE_FRAMES || len < n {
        return Err(Error::SequenceTooShort { need: n.max(PRIMITIVE_FRAMES), got: len });
    }
    let take = |centre: usize| seq.data.slice(s![centre - HALF_WINDOW..centre + HALF_WINDOW, ..]).to_owned();
    let boundary_motions: Vec<BoundaryMotion> = (1..len / n)
        .filter(|i| i * n + HALF_WINDOW <= len)
        .map(|i| BoundaryMotion {
            boundary: i,
            frames: take(i * n),
        })
        .collect();
    let mut key_motions: Vec<KeyMotion> = Vec::new();
    for &b in dance_beats {
        if b < HALF_WINDOW || b + HALF_WINDOW > len {
            continue;
        }
        let Some(target) = music_beats.nearest(b) else { continue };
        if target < HALF_WINDOW || target + HALF_WINDOW > len {
            continue;
        }
        if boundary_motions.iter().any(|h| overlaps(h.boundary * n, target)) {
            continue;
        }
        if key_motions.iter().any(|k| k.target_frame == target) {
            continue;
        }
        key_motions.push(KeyMotion {
            target_frame: target,
            frames: take(b),
        });
    }
    Ok(DancePrimitives {
        key_motions,
        boundary_motions,
    })
}

pub fn extract_primitives(
    seq: &MotionSequence,
    skeleton: &Skeleton,
    music_beats: &BeatGrid,
    n: usize,
) -> Result<DancePrimitives> {
    if seq.len() < n {
        return Err(Error::SequenceTooShort { need: n, got: seq.len() });
    }
    let beats = detect_dance_beats(seq, skeleton)?;
    primitives_from_beats(seq, &beats, music_beats, n)
}

/// Writes primitives onto an `L×139` canvas. Boundary windows are written
/// last and win any overlap with key motions; unmasked rows stay zero.
pub fn build_primitive_canvas(primitives: &DancePrimitives, len: usize, n: usize) -> Result<(Array2<f64>, Vec<bool>)> {
    let mut canvas = Array2::zeros((len, FRAME_DIMS));
    let mut mask = vec![false; len];
    let place = |centre: usize, frames: &Array2<f64>, canvas: &mut Array2<f64>, mask: &mut [bool]| -> Result<()> {
        if centre < HALF_WINDOW || centre + HALF_WINDOW > len || frames.dim() != (PRIMITIVE_FRAMES, FRAME_DIMS) {
            return Err(Error::data(format!("primitive at frame {centre} does not fit a canvas of {len}")));
        }
        canvas.slice_mut(s![centre - HALF_WINDOW..centre + HALF_WINDOW, ..]).assign(frames);
        mask[centre - HALF_WINDOW..centre + HALF_WINDOW].fill(true);
        Ok(())
    };
    for k in &primitives.key_motions {
        place(k.target_frame, &k.frames, &mut canvas, &mut mask)?;
    }
    let mut centres: Vec<usize> = Vec::new();
    for h in &primitives.boundary_motions {
        let centre = h.boundary * n;
        if centres.iter().any(|&c| overlaps(c, centre)) {
            return Err(Error::OverlapConflict(centre));
        }
        centres.push(centre);
        place(centre, &h.frames, &mut canvas, &mut mask)?;
    }
    Ok((canvas, mask))
}
