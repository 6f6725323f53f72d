use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, ANALYSIS_RATE, WINDOW};
use crate::error::{Error, Result};

pub const MEL_BANDS: usize = 64;
pub const MEL_MAX_HZ: f64 = 8000.0;
pub const MFCC_COUNT: usize = 20;
pub const LOG_FLOOR: f64 = 1e-10;
const CHROMA_MIN_HZ: f64 = 55.0;
const CHROMA_MAX_HZ: f64 = 5000.0;

/// Magnitude spectrogram on the analysis clock: one row per output frame,
/// `WINDOW/2 + 1` bins. Frame `l` is centred on sample `l·hop` with zero
/// padding outside the signal.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub hop: usize,
}

impl Spectrogram {
    pub fn compute(clip: &AudioClip, fps: f64) -> Result<Self> {
        let frames = clip.frame_count(fps);
        if clip.duration() < 1.0 {
            return Err(Error::AudioTooShort {
                need_s: 1.0,
                got_s: clip.duration(),
            });
        }
        let signal = clip.resampled(ANALYSIS_RATE);
        let hop = (ANALYSIS_RATE as f64 / fps).round() as usize;
        let window: Vec<f64> = (0..WINDOW)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / WINDOW as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(WINDOW);
        let bins = WINDOW / 2 + 1;
        let mut magnitudes = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
        let half = (WINDOW / 2) as isize;
        for l in 0..frames {
            let start = (l * hop) as isize - half;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex::new(s * window[i], 0.0);
            }
            fft.process(&mut buf);
            for b in 0..bins {
                magnitudes[[l, b]] = buf[b].norm();
            }
        }
        Ok(Self { magnitudes, hop })
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    fn bin_hz(b: usize) -> f64 {
        b as f64 * ANALYSIS_RATE as f64 / WINDOW as f64
    }

    /// Half-wave rectified spectral flux, max-normalised to `[0, 1]`.
    /// Frame 0 is compared against an all-zero spectrum.
    pub fn onset(&self) -> Vec<f64> {
        let mut env = vec![0.0; self.frames()];
        for l in 0..self.frames() {
            let cur = self.magnitudes.row(l);
            env[l] = if l == 0 {
                cur.sum()
            } else {
                let prev = self.magnitudes.row(l - 1);
                cur.iter().zip(prev.iter()).map(|(c, p)| (c - p).max(0.0)).sum()
            };
        }
        let max = env.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            env.iter_mut().for_each(|v| *v /= max);
        }
        env
    }

    pub fn mfcc(&self) -> Array2<f64> {
        let bank = mel_filterbank();
        let mut out = Array2::zeros((self.frames(), MFCC_COUNT));
        let mut logmel = vec![0.0; MEL_BANDS];
        for l in 0..self.frames() {
            let row = self.magnitudes.row(l);
            for (m, filt) in bank.iter().enumerate() {
                let energy: f64 = filt.iter().map(|&(b, w)| w * row[b] * row[b]).sum();
                logmel[m] = energy.max(LOG_FLOOR).ln();
            }
            for k in 1..=MFCC_COUNT {
                out[[l, k - 1]] = dct_ortho(&logmel, k);
            }
        }
        out
    }

    pub fn chroma(&self) -> Array2<f64> {
        let classes: Vec<Option<usize>> = (0..self.magnitudes.ncols())
            .map(|b| {
                let f = Self::bin_hz(b);
                (CHROMA_MIN_HZ..=CHROMA_MAX_HZ).contains(&f).then(|| {
                    let semis = (12.0 * (f / 440.0).log2()).round() as i64;
                    (semis + 9).rem_euclid(12) as usize
                })
            })
            .collect();
        let mut out = Array2::zeros((self.frames(), 12));
        for l in 0..self.frames() {
            for (b, class) in classes.iter().enumerate() {
                if let Some(c) = class {
                    out[[l, *c]] += self.magnitudes[[l, b]].powi(2);
                }
            }
            let total: f64 = out.row(l).sum();
            if total > 1e-12 {
                out.row_mut(l).mapv_inplace(|v| v / total);
            } else {
                out.row_mut(l).fill(0.0);
            }
        }
        out
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK mel filters as sparse `(bin, weight)` lists.
fn mel_filterbank() -> Vec<Vec<(usize, f64)>> {
    let top = hz_to_mel(MEL_MAX_HZ);
    let edges: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (MEL_BANDS + 1) as f64))
        .collect();
    (0..MEL_BANDS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=WINDOW / 2)
                .filter_map(|b| {
                    let f = Spectrogram::bin_hz(b);
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((b, w))
                })
                .collect()
        })
        .collect()
}

/// Coefficient `k` of the orthonormal DCT-II of `x`.
fn dct_ortho(x: &[f64], k: usize) -> f64 {
    let m = x.len() as f64;
    let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
    scale
        * x.iter()
            .enumerate()
            .map(|(i, v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * m)).cos())
            .sum::<f64>()
}
