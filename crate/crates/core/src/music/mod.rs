//! Per-frame music features on the motion clock: onset envelope, 20 MFCCs,
//! 12 chroma bins, peak and beat indicators (35 columns at 30 fps).

mod audio;
mod beats;
mod spectral;

use std::fs;
use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::io::{decode_f32s, read_f32_header};

pub use audio::{read_wav, resample, write_wav};
pub use beats::{estimate_period, track_beats};
pub use spectral::{Spectrogram, LOG_FLOOR, MEL_BANDS, MFCC_COUNT};

/// Internal analysis sample rate.
pub const ANALYSIS_RATE: u32 = 22_050;
/// STFT window length in samples.
pub const WINDOW: usize = 1024;
pub const MUSIC_FPS: f64 = 30.0;
pub const FEATURE_DIMS: usize = 35;
pub const MIN_SAMPLE_RATE: u32 = 8000;

pub const ONSET_COL: usize = 0;
pub const MFCC_COLS: std::ops::Range<usize> = 1..21;
pub const CHROMA_COLS: std::ops::Range<usize> = 21..33;
pub const PEAK_COL: usize = 33;
pub const BEAT_COL: usize = 34;
/// Envelope level a local maximum must exceed to be marked as a peak.
pub const PEAK_THRESHOLD: f64 = 0.5;

const MFEAT_MAGIC: &[u8; 4] = b"MFEA";
const MFEAT_VERSION: u32 = 1;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::data(format!(
                "sample rate {sample_rate} Hz is below {MIN_SAMPLE_RATE} Hz"
            )));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::data("audio contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// `floor(duration × fps)`.
    pub fn frame_count(&self, fps: f64) -> usize {
        (self.samples.len() as f64 * fps / self.sample_rate as f64 + 1e-9).floor() as usize
    }

    pub fn resampled(&self, rate: u32) -> Vec<f64> {
        resample(&self.samples, self.sample_rate, rate)
    }
}

/// Sorted, strictly increasing beat frame indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatGrid {
    pub beat_frames: Vec<usize>,
}

impl BeatGrid {
    pub fn new(mut beat_frames: Vec<usize>) -> Self {
        beat_frames.sort_unstable();
        beat_frames.dedup();
        Self { beat_frames }
    }

    pub fn is_empty(&self) -> bool {
        self.beat_frames.is_empty()
    }

    /// Beat nearest to `frame`; ties go to the earlier beat.
    pub fn nearest(&self, frame: usize) -> Option<usize> {
        self.beat_frames
            .iter()
            .copied()
            .min_by_key(|&b| (b.abs_diff(frame), b))
    }
}

/// `L×35` music feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicFeatures {
    pub fps: f64,
    pub data: Array2<f64>,
}

impl MusicFeatures {
    pub fn new(fps: f64, data: Array2<f64>) -> Result<Self> {
        if data.ncols() != FEATURE_DIMS {
            return Err(Error::shape(format!(
                "music features must have {FEATURE_DIMS} columns, got {}",
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::data("music features contain non-finite values"));
        }
        Ok(Self { fps, data })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn beats(&self) -> BeatGrid {
        BeatGrid::new(
            (0..self.len())
                .filter(|&i| self.data[[i, BEAT_COL]] > 0.5)
                .collect(),
        )
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            fps: self.fps,
            data: self.data.slice(s![start..end, ..]).to_owned(),
        }
    }

    /// Extends to `len` rows by cycling the existing rows from the start.
    pub fn padded_by_repetition(&self, len: usize) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::data("cannot pad empty music features"));
        }
        let mut data = Array2::zeros((len, FEATURE_DIMS));
        for i in 0..len {
            data.row_mut(i).assign(&self.data.row(i % self.len()));
        }
        Ok(Self { fps: self.fps, data })
    }

    pub fn to_mfeat_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(MFEAT_MAGIC);
        out.extend_from_slice(&MFEAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(FEATURE_DIMS as u32).to_le_bytes());
        for v in self.data.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_mfeat_bytes(bytes: &[u8]) -> Result<Self> {
        let (rows, dims, payload) = read_f32_header(bytes, MFEAT_MAGIC, MFEAT_VERSION)?;
        if dims != FEATURE_DIMS {
            return Err(Error::shape(format!("mfeat dims {dims}, expected {FEATURE_DIMS}")));
        }
        let values = decode_f32s(payload, rows * dims)?;
        Self::new(
            MUSIC_FPS,
            Array2::from_shape_vec((rows, dims), values).expect("checked shape"),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&FeaturesJson {
            fps: self.fps,
            frames: self.data.outer_iter().map(|r| r.to_vec()).collect(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FeaturesJson = serde_json::from_str(text)?;
        let rows = doc.frames.len();
        if doc.frames.iter().any(|f| f.len() != FEATURE_DIMS) {
            return Err(Error::shape(format!("every frame needs {FEATURE_DIMS} values")));
        }
        let flat = doc.frames.into_iter().flatten().collect();
        Self::new(
            doc.fps,
            Array2::from_shape_vec((rows, FEATURE_DIMS), flat).expect("checked shape"),
        )
    }

    /// Writes `.json` or `.mfeat` by extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = if path.extension().is_some_and(|e| e == "json") {
            self.to_json()?.into_bytes()
        } else {
            self.to_mfeat_bytes()
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(std::str::from_utf8(&bytes).map_err(|e| Error::data(e.to_string()))?)
        } else {
            Self::from_mfeat_bytes(&bytes)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FeaturesJson {
    fps: f64,
    frames: Vec<Vec<f64>>,
}

pub fn onset_envelope(audio: &AudioClip, fps: f64) -> Result<Vec<f64>> {
    Ok(Spectrogram::compute(audio, fps)?.onset())
}

pub fn mfcc(audio: &AudioClip, fps: f64) -> Result<Array2<f64>> {
    Ok(Spectrogram::compute(audio, fps)?.mfcc())
}

pub fn chroma(audio: &AudioClip, fps: f64) -> Result<Array2<f64>> {
    Ok(Spectrogram::compute(audio, fps)?.chroma())
}

/// Strict local maxima of `envelope` above [`PEAK_THRESHOLD`]; the signal is
/// taken as zero beyond both ends.
pub fn envelope_peaks(envelope: &[f64]) -> Vec<usize> {
    let at = |i: isize| {
        if i < 0 || i as usize >= envelope.len() {
            0.0
        } else {
            envelope[i as usize]
        }
    };
    (0..envelope.len())
        .filter(|&i| {
            let v = envelope[i];
            v > PEAK_THRESHOLD && v > at(i as isize - 1) && v > at(i as isize + 1)
        })
        .collect()
}

pub fn extract_music_features(audio: &AudioClip) -> Result<MusicFeatures> {
    let spec = Spectrogram::compute(audio, MUSIC_FPS)?;
    let env = spec.onset();
    let mfcc = spec.mfcc();
    let chroma = spec.chroma();
    let beats = track_beats(&env, MUSIC_FPS)?;
    let len = spec.frames();
    let mut data = Array2::zeros((len, FEATURE_DIMS));
    for i in 0..len {
        data[[i, ONSET_COL]] = env[i];
    }
    data.slice_mut(s![.., MFCC_COLS]).assign(&mfcc);
    data.slice_mut(s![.., CHROMA_COLS]).assign(&chroma);
    for p in envelope_peaks(&env) {
        data[[p, PEAK_COL]] = 1.0;
    }
    for &b in &beats.beat_frames {
        data[[b, BEAT_COL]] = 1.0;
    }
    MusicFeatures::new(MUSIC_FPS, data)
}
