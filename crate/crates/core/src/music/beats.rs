//! Dynamic-programming beat tracker over an onset envelope.

use super::BeatGrid;
use crate::error::{Error, Result};

const MIN_BPM: f64 = 60.0;
const MAX_BPM: f64 = 180.0;
const PRIOR_BPM: f64 = 120.0;
/// Width of the log-tempo prior, in octaves.
const PRIOR_OCTAVES: f64 = 1.0;
/// Penalty on squared log deviation of an inter-beat interval from the period.
const TIGHTNESS: f64 = 100.0;

/// Tempo period in frames (fractional) from the weighted envelope autocorrelation.
pub fn estimate_period(envelope: &[f64], fps: f64) -> f64 {
    let min_lag = (fps * 60.0 / MAX_BPM).round() as usize;
    let max_lag = (fps * 60.0 / MIN_BPM).round() as usize;
    let center = fps * 60.0 / PRIOR_BPM;
    let len = envelope.len();
    let ac = |lag: usize| -> f64 {
        if lag >= len {
            return 0.0;
        }
        let s: f64 = (0..len - lag).map(|t| envelope[t] * envelope[t + lag]).sum();
        s / (len - lag) as f64
    };
    let weight = |lag: f64| (-0.5 * ((lag / center).log2() / PRIOR_OCTAVES).powi(2)).exp();
    let scores: Vec<f64> = (min_lag - 1..=max_lag + 1)
        .map(|lag| ac(lag) * weight(lag as f64))
        .collect();
    let mut best = 1;
    for i in 1..scores.len() - 1 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    let lag = (min_lag - 1 + best) as f64;
    let (a, b, c) = (scores[best - 1], scores[best], scores[best + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    (lag + shift).clamp(min_lag as f64, max_lag as f64)
}

/// Beat frames maximising onset strength under a tempo-consistency penalty.
/// An all-zero envelope yields an empty grid.
pub fn track_beats(envelope: &[f64], fps: f64) -> Result<BeatGrid> {
    let len = envelope.len();
    if (len as f64) < fps {
        return Err(Error::AudioTooShort {
            need_s: 1.0,
            got_s: len as f64 / fps,
        });
    }
    if envelope.iter().all(|&v| v <= 0.0) {
        return Ok(BeatGrid::default());
    }
    let period = estimate_period(envelope, fps);
    let local = local_score(envelope, period);

    let mut cum = vec![0.0; len];
    let mut back: Vec<Option<usize>> = vec![None; len];
    let far = (2.0 * period).round() as usize;
    let near = (period / 2.0).round() as usize;
    for i in 0..len {
        let mut best: Option<(usize, f64)> = None;
        if i >= near {
            for prev in i.saturating_sub(far)..=i - near {
                let dev = ((i - prev) as f64 / period).ln();
                let s = cum[prev] - TIGHTNESS * dev * dev;
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((prev, s));
                }
            }
        }
        match best {
            Some((prev, s)) if s > 0.0 => {
                cum[i] = local[i] + s;
                back[i] = Some(prev);
            }
            _ => cum[i] = local[i],
        }
    }

    let Some(last) = last_beat(&cum) else {
        return Ok(BeatGrid::default());
    };
    let mut beats = vec![last];
    let mut cur = last;
    while let Some(prev) = back[cur] {
        beats.push(prev);
        cur = prev;
    }
    beats.reverse();
    Ok(BeatGrid {
        beat_frames: trim_weak_ends(beats, &local),
    })
}

/// Standardised envelope smoothed by a narrow Gaussian (σ = period/32).
fn local_score(envelope: &[f64], period: f64) -> Vec<f64> {
    let len = envelope.len() as f64;
    let mean = envelope.iter().sum::<f64>() / len;
    let std = (envelope.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len).sqrt();
    let norm: Vec<f64> = envelope
        .iter()
        .map(|v| if std > 0.0 { v / std } else { *v })
        .collect();
    let half = period.round() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|t| (-0.5 * (t as f64 * 32.0 / period).powi(2)).exp())
        .collect();
    convolve_same(&norm, &kernel)
}

fn convolve_same(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    (0..x.len() as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(k, w)| {
                    let j = i + k as isize - half;
                    (j >= 0 && (j as usize) < x.len()).then(|| w * x[j as usize])
                })
                .sum()
        })
        .collect()
}

/// Last local maximum of the cumulative score exceeding half the median peak.
fn last_beat(cum: &[f64]) -> Option<usize> {
    let n = cum.len();
    let is_max = |i: usize| {
        let left = if i == 0 { f64::NEG_INFINITY } else { cum[i - 1] };
        let right = if i + 1 == n { f64::NEG_INFINITY } else { cum[i + 1] };
        cum[i] > left && cum[i] >= right
    };
    let mut peaks: Vec<f64> = (0..n).filter(|&i| is_max(i)).map(|i| cum[i]).collect();
    if peaks.is_empty() {
        return None;
    }
    peaks.sort_by(|a, b| a.total_cmp(b));
    let median = peaks[peaks.len() / 2];
    (0..n).rev().find(|&i| is_max(i) && 2.0 * cum[i] > median)
}

/// Drops leading and trailing beats whose smoothed onset falls below half
/// the RMS onset over all beats.
fn trim_weak_ends(beats: Vec<usize>, local: &[f64]) -> Vec<usize> {
    if beats.is_empty() {
        return beats;
    }
    let smooth = convolve_same(local, &[0.0, 0.5, 1.0, 0.5, 0.0]);
    let rms = (beats.iter().map(|&b| smooth[b].powi(2)).sum::<f64>() / beats.len() as f64).sqrt();
    let threshold = 0.5 * rms;
    let start = beats.iter().position(|&b| smooth[b] >= threshold).unwrap_or(beats.len());
    let end = beats.iter().rposition(|&b| smooth[b] >= threshold).map_or(start, |e| e + 1);
    beats[start..end.max(start)].to_vec()
}
