//! Synthetic paired corpus: click-and-chord audio at a chosen tempo, and a
//! dance that moves between genre-specific key poses exactly on the beats.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::io::write_motion;
use crate::motion::rotation::{axis_angle, rot6d_from_matrix};
use crate::motion::skeleton::{joints::*, STANDING_ROOT_HEIGHT};
use crate::motion::{
    detect_foot_contacts, rotation_cols, sequence_positions, MotionSequence, Skeleton, CONTACT_COLS, DEFAULT_FPS,
    FRAME_DIMS, JOINT_COUNT, ROOT_TRANSLATION_COLS,
};
use crate::music::{write_wav, AudioClip, ANALYSIS_RATE};

pub const MANIFEST: &str = "manifest.json";
/// Template banks available; `genre_count` may not exceed this.
pub const GENRE_BANKS: usize = 4;
const FIRST_BEAT_S: f64 = 0.5;
const THIGH: f64 = 0.40;
const SHIN: f64 = 0.42;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub count: usize,
    pub bpm_range: (f64, f64),
    pub duration_s: f64,
    pub genre_count: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            count: 10,
            bpm_range: (90.0, 130.0),
            duration_s: 8.0,
            genre_count: GENRE_BANKS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub name: String,
    pub genre: usize,
    pub bpm: f64,
    pub frames: usize,
    pub audio: String,
    pub motion: String,
    /// Frames the motion's key poses were placed on.
    pub beats: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fps: f64,
    pub pairs: Vec<PairEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn audio_path(&self, dir: &Path, i: usize) -> PathBuf {
        dir.join(&self.pairs[i].audio)
    }

    pub fn motion_path(&self, dir: &Path, i: usize) -> PathBuf {
        dir.join(&self.pairs[i].motion)
    }
}

/// One in-memory pair.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub audio: AudioClip,
    pub motion: MotionSequence,
    pub genre: usize,
    pub bpm: f64,
    pub beats: Vec<usize>,
}

/// Scalar pose parameters (radians) interpolated between key poses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PoseParams {
    raise: [f64; 2],
    forward: [f64; 2],
    elbow: [f64; 2],
    /// Knee lift of a free leg, applied so the foot rises straight up.
    lift: [f64; 2],
    /// Symmetric knee bend with both feet planted.
    plie: f64,
    twist: f64,
    bend: f64,
    nod: f64,
}

impl PoseParams {
    fn lerp(&self, other: &Self, w: f64) -> Self {
        let m = |a: f64, b: f64| a + (b - a) * w;
        let m2 = |a: [f64; 2], b: [f64; 2]| [m(a[0], b[0]), m(a[1], b[1])];
        Self {
            raise: m2(self.raise, other.raise),
            forward: m2(self.forward, other.forward),
            elbow: m2(self.elbow, other.elbow),
            lift: m2(self.lift, other.lift),
            plie: m(self.plie, other.plie),
            twist: m(self.twist, other.twist),
            bend: m(self.bend, other.bend),
            nod: m(self.nod, other.nod),
        }
    }

    /// Upper-body jitter; leg parameters stay exact so feet stay planted.
    fn jittered(mut self, rng: &mut ChaCha8Rng) -> Self {
        let mut j = |v: &mut f64| *v += rng.gen_range(-0.08..0.08);
        for side in 0..2 {
            j(&mut self.raise[side]);
            j(&mut self.forward[side]);
        }
        j(&mut self.twist);
        j(&mut self.nod);
        self
    }
}

fn p(raise: [f64; 2], forward: [f64; 2], elbow: [f64; 2]) -> PoseParams {
    PoseParams {
        raise,
        forward,
        elbow,
        ..Default::default()
    }
}

/// Key poses for even and odd beats. Genres differ in which limbs carry the
/// movement: arms, legs, torso, or a whole-body bounce.
fn banks(genre: usize) -> [Vec<PoseParams>; 2] {
    match genre {
        0 => {
            let bank = vec![
                p([1.2, 1.2], [0.0, 0.0], [0.3, 0.3]),
                p([-0.9, 0.6], [0.8, 0.0], [0.0, 0.4]),
                p([0.4, -0.9], [0.0, 0.8], [0.4, 0.0]),
                p([0.2, 0.2], [1.2, 1.2], [0.6, 0.6]),
            ];
            [bank.clone(), bank]
        }
        1 => {
            let lift = |l: f64, r: f64, raise: [f64; 2]| PoseParams {
                lift: [l, r],
                ..p(raise, [0.0, 0.0], [0.2, 0.2])
            };
            [
                vec![lift(0.0, 0.0, [-0.6, -0.6]), lift(0.0, 0.0, [-0.4, -0.7])],
                vec![lift(0.9, 0.0, [0.3, 0.3]), lift(0.0, 0.9, [0.3, 0.3]), lift(0.6, 0.0, [-0.2, 0.5]), lift(0.0, 0.6, [0.5, -0.2])],
            ]
        }
        2 => {
            let torso = |twist: f64, bend: f64, nod: f64| PoseParams {
                twist,
                bend,
                nod,
                ..p([0.5, 0.5], [0.4, 0.4], [0.2, 0.2])
            };
            let bank = vec![
                torso(0.4, 0.0, 0.2),
                torso(-0.4, 0.0, -0.2),
                torso(0.0, 0.25, 0.0),
                torso(0.0, -0.25, 0.1),
            ];
            [bank.clone(), bank]
        }
        _ => {
            let bounce = |plie: f64, raise: [f64; 2], forward: [f64; 2]| PoseParams {
                plie,
                ..p(raise, forward, [0.3, 0.3])
            };
            [
                vec![bounce(0.5, [-0.5, -0.5], [0.6, 0.6]), bounce(0.4, [0.0, 0.0], [0.9, 0.9])],
                vec![bounce(0.0, [0.8, 0.8], [0.0, 0.0]), bounce(0.05, [0.5, 0.9], [0.2, 0.0])],
            ]
        }
    }
}

fn rx(a: f64) -> Matrix3<f64> {
    axis_angle(Vector3::x(), a)
}
fn ry(a: f64) -> Matrix3<f64> {
    axis_angle(Vector3::y(), a)
}
fn rz(a: f64) -> Matrix3<f64> {
    axis_angle(Vector3::z(), a)
}

/// Hip and knee angles that raise the ankle straight up.
fn lift_angles(theta: f64) -> (f64, f64) {
    let shin = (THIGH / SHIN * theta.sin()).clamp(-1.0, 1.0).asin();
    (theta, theta + shin)
}

fn build_frame(params: &PoseParams, row: &mut ndarray::ArrayViewMut1<'_, f64>) -> Result<()> {
    let mut local = vec![Matrix3::identity(); JOINT_COUNT];
    local[LEFT_SHOULDER] = ry(-params.forward[0]) * rz(params.raise[0]);
    local[RIGHT_SHOULDER] = ry(params.forward[1]) * rz(-params.raise[1]);
    local[LEFT_ELBOW] = ry(-params.elbow[0]);
    local[RIGHT_ELBOW] = ry(params.elbow[1]);
    for (side, (hip, knee, ankle)) in [(LEFT_HIP, LEFT_KNEE, LEFT_ANKLE), (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE)]
        .into_iter()
        .enumerate()
    {
        let (h, k) = if params.lift[side] > 0.0 {
            lift_angles(params.lift[side])
        } else {
            (params.plie, 2.0 * params.plie)
        };
        // Forward hip flexion is a negative turn about +x; the ankle keeps the foot flat.
        local[hip] = rx(-h);
        local[knee] = rx(k);
        local[ankle] = rx(h - k);
    }
    local[SPINE1] = ry(0.5 * params.twist) * rz(0.5 * params.bend);
    local[SPINE2] = ry(0.5 * params.twist) * rz(0.5 * params.bend);
    local[NECK] = rx(params.nod);
    for (j, r) in local.iter().enumerate() {
        for (c, v) in rotation_cols(j).zip(rot6d_from_matrix(r)?) {
            row[c] = v;
        }
    }
    let drop = (THIGH + SHIN) * (1.0 - params.plie.cos());
    row[ROOT_TRANSLATION_COLS.start + 1] = STANDING_ROOT_HEIGHT - drop;
    Ok(())
}

fn ease(w: f64) -> f64 {
    0.5 - 0.5 * (PI * w).cos()
}

/// Beat frames of a click track starting at [`FIRST_BEAT_S`].
pub fn beat_frames(bpm: f64, frames: usize) -> Vec<usize> {
    let period = 60.0 / bpm;
    (0..)
        .map(|b| ((FIRST_BEAT_S + b as f64 * period) * DEFAULT_FPS).round() as usize)
        .take_while(|&f| f < frames)
        .collect()
}

fn render_audio(bpm: f64, duration_s: f64, genre: usize) -> Result<AudioClip> {
    let rate = ANALYSIS_RATE as f64;
    let n = (duration_s * rate).round() as usize;
    let root = 110.0 * 2f64.powf(genre as f64 * 3.0 / 12.0);
    let chord = [root, root * 2f64.powf(4.0 / 12.0), root * 2f64.powf(7.0 / 12.0)];
    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            chord.iter().map(|f| 0.05 * (2.0 * PI * f * t).sin()).sum()
        })
        .collect();
    let period = 60.0 / bpm;
    let click_len = (0.04 * rate) as usize;
    let mut b = 0;
    loop {
        let start = ((FIRST_BEAT_S + b as f64 * period) * rate).round() as usize;
        if start >= n {
            break;
        }
        for i in 0..click_len.min(n - start) {
            let t = i as f64 / rate;
            samples[start + i] += 0.8 * (2.0 * PI * 1000.0 * t).sin() * (-t / 0.01).exp();
        }
        b += 1;
    }
    AudioClip::new(samples, ANALYSIS_RATE)
}

/// Key poses sit on exact (fractional) beat times, one beat either side of
/// the clip included, so every in-clip beat is a full stop between moves.
fn render_motion(bpm: f64, frames: usize, genre: usize, rng: &mut ChaCha8Rng, skeleton: &Skeleton) -> Result<MotionSequence> {
    let [even, odd] = banks(genre);
    let period = 60.0 / bpm * DEFAULT_FPS;
    let lead = (FIRST_BEAT_S * DEFAULT_FPS / period).floor() + 1.0;
    let first = FIRST_BEAT_S * DEFAULT_FPS - lead * period;
    let count = ((frames as f64 - first) / period).ceil() as usize + 1;
    let times: Vec<f64> = (0..count).map(|b| first + b as f64 * period).collect();
    let shared = even == odd;
    let mut last = usize::MAX;
    let keys: Vec<PoseParams> = (0..count)
        .map(|b| {
            let bank = if b % 2 == 0 { &even } else { &odd };
            // Consecutive keys from one bank must differ, or the beat between them has no stop.
            let mut idx = rng.gen_range(0..bank.len());
            if shared && idx == last {
                idx = (idx + rng.gen_range(1..bank.len())) % bank.len();
            }
            last = idx;
            bank[idx].jittered(rng)
        })
        .collect();
    let mut data = Array2::zeros((frames, FRAME_DIMS));
    for i in 0..frames {
        let t = i as f64;
        let next = times.iter().position(|&b| b > t).expect("key times extend past the clip");
        let (a, b) = (times[next - 1], times[next]);
        let params = keys[next - 1].lerp(&keys[next], ease((t - a) / (b - a)));
        build_frame(&params, &mut data.row_mut(i))?;
    }
    let mut seq = MotionSequence::new(DEFAULT_FPS, data)?;
    let contacts = detect_foot_contacts(&sequence_positions(&seq, skeleton)?, DEFAULT_FPS);
    seq.data.slice_mut(s![.., CONTACT_COLS]).assign(&contacts);
    Ok(seq)
}

/// The `index`-th pair of a corpus; independent of every other pair.
pub fn synth_pair(options: &SynthOptions, index: usize, skeleton: &Skeleton) -> Result<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(index as u64);
    let (lo, hi) = options.bpm_range;
    let bpm = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let genre = index % options.genre_count;
    let audio = render_audio(bpm, options.duration_s, genre)?;
    let frames = audio.frame_count(DEFAULT_FPS);
    let beats = beat_frames(bpm, frames);
    let motion = render_motion(bpm, frames, genre, &mut rng, skeleton)?;
    Ok(SyntheticPair {
        audio,
        motion,
        genre,
        bpm,
        beats,
    })
}

fn check(options: &SynthOptions) -> Result<()> {
    if options.duration_s < 4.0 {
        return Err(Error::Config(format!("duration {} s is below 4 s", options.duration_s)));
    }
    if options.genre_count == 0 || options.genre_count > GENRE_BANKS {
        return Err(Error::Config(format!("genre_count must be in 1..={GENRE_BANKS}")));
    }
    let (lo, hi) = options.bpm_range;
    if !(60.0..=150.0).contains(&lo) || !(lo..=150.0).contains(&hi) {
        return Err(Error::Config(format!("bpm range {lo}..{hi} must lie within 60..150")));
    }
    Ok(())
}

/// Writes `count` `.wav`/`.mseq` pairs and a manifest into `dir`.
pub fn synth_data(dir: &Path, options: &SynthOptions, skeleton: &Skeleton) -> Result<Manifest> {
    check(options)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::with_capacity(options.count);
    for i in 0..options.count {
        let pair = synth_pair(options, i, skeleton)?;
        let name = format!("pair_{i:04}");
        let (audio, motion) = (format!("{name}.wav"), format!("{name}.mseq"));
        write_wav(&dir.join(&audio), &pair.audio)?;
        write_motion(&dir.join(&motion), &pair.motion)?;
        pairs.push(PairEntry {
            name,
            genre: pair.genre,
            bpm: pair.bpm,
            frames: pair.motion.len(),
            audio,
            motion,
            beats: pair.beats,
        });
    }
    let manifest = Manifest {
        fps: DEFAULT_FPS,
        pairs,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::penetration_ratio;
    use crate::choreo::detect_dance_beats;
    use crate::metrics::{beat_align_score, foot_skating_ratio};

    fn opts(seed: u64) -> SynthOptions {
        SynthOptions {
            count: 4,
            duration_s: 6.0,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn lift_keeps_the_ankle_above_its_rest_spot() {
        let skel = Skeleton::default();
        let mut seq = MotionSequence::rest_pose(2);
        let params = PoseParams {
            lift: [0.7, 0.0],
            ..Default::default()
        };
        build_frame(&params, &mut seq.data.row_mut(1)).unwrap();
        let pos = sequence_positions(&seq, &skel).unwrap();
        let (a, b) = (pos.joint(0, LEFT_ANKLE), pos.joint(1, LEFT_ANKLE));
        assert!((a[0] - b[0]).abs() < 1e-9);
        assert!((a[2] - b[2]).abs() < 0.01, "{} vs {}", a[2], b[2]);
        assert!(b[1] > a[1] + 0.1);
        let (fa, fb) = (pos.joint(0, LEFT_FOOT), pos.joint(1, LEFT_FOOT));
        assert!(((fb - fa)[1] - (b - a)[1]).abs() < 1e-9, "foot stays flat");
    }

    #[test]
    fn plie_keeps_feet_on_the_ground() {
        let skel = Skeleton::default();
        let mut seq = MotionSequence::rest_pose(2);
        let params = PoseParams {
            plie: 0.5,
            ..Default::default()
        };
        build_frame(&params, &mut seq.data.row_mut(1)).unwrap();
        let pos = sequence_positions(&seq, &skel).unwrap();
        for j in [LEFT_FOOT, RIGHT_ANKLE] {
            let d = pos.joint(1, j) - pos.joint(0, j);
            assert!(d.norm() < 0.02, "joint {j} moved {}", d.norm());
        }
    }

    #[test]
    fn pairs_have_matching_lengths_and_clean_motion() {
        let skel = Skeleton::default();
        for i in 0..4 {
            let pair = synth_pair(&opts(3), i, &skel).unwrap();
            assert_eq!(pair.audio.frame_count(DEFAULT_FPS), pair.motion.len());
            pair.motion.validate(true).unwrap();
            let fsr = foot_skating_ratio(&pair.motion, &skel).unwrap();
            let pr = penetration_ratio(&pair.motion, &skel);
            assert!(fsr < 1.0, "genre {}: fsr {fsr}", pair.genre);
            assert!(pr < 0.1, "genre {}: pr {pr}", pair.genre);
        }
    }

    #[test]
    fn dance_beats_follow_the_music() {
        let skel = Skeleton::default();
        for i in 0..4 {
            let pair = synth_pair(&opts(5), i, &skel).unwrap();
            let dance = detect_dance_beats(&pair.motion, &skel).unwrap();
            let bas = beat_align_score(&dance, &pair.beats, 3.0).unwrap();
            assert!(bas > 0.8, "genre {}: bas {bas}", pair.genre);
        }
    }

    #[test]
    fn tracked_music_beats_match_construction() {
        let skel = Skeleton::default();
        for i in 0..4 {
            let pair = synth_pair(&opts(6), i, &skel).unwrap();
            let tracked = crate::music::extract_music_features(&pair.audio).unwrap().beats();
            for &b in &pair.beats[..pair.beats.len() - 1] {
                let near = tracked.nearest(b).unwrap();
                assert!(near.abs_diff(b) <= 1, "beat {b}: nearest tracked {near}");
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_per_seed() {
        let skel = Skeleton::default();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = synth_data(a.path(), &opts(9), &skel).unwrap();
        synth_data(b.path(), &opts(9), &skel).unwrap();
        assert_eq!(m.pairs.len(), 4);
        for name in std::iter::once(MANIFEST.to_string()).chain(m.pairs.iter().flat_map(|p| [p.audio.clone(), p.motion.clone()])) {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name}");
        }
        assert_eq!(Manifest::read(a.path()).unwrap(), m);
    }

    #[test]
    fn rejects_short_durations() {
        let skel = Skeleton::default();
        let dir = tempfile::tempdir().unwrap();
        let bad = SynthOptions {
            duration_s: 3.0,
            ..opts(0)
        };
        assert!(synth_data(dir.path(), &bad, &skel).is_err());
    }
}
