//! End-to-end orchestration behind the command line: synthetic data, feature
//! extraction, toy training, generation, evaluation and export.

mod config;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use ndarray::{s, Array2};

use crate::choreo::{
    build_primitive_canvas, extract_primitives, generate_choreography, train_gpt, GenreId, GptExample, GptTrainConfig, Sampling, TinyGpt,
    TinyGptConfig,
};
use crate::error::{Error, Result, StageExt};
use crate::metrics::{evaluate, EvalReport};
use crate::motion::bvh::write_bvh;
use crate::motion::io::{read_motion, write_motion};
use crate::motion::skeleton::STANDING_ROOT_HEIGHT;
use crate::motion::{
    detect_foot_contacts, extract_coarse, lift_coarse_to_full, sequence_positions, CoarseMotion, MotionSequence,
    Skeleton, CONTACT_COLS, ROOT_TRANSLATION_COLS,
};
use crate::music::{extract_music_features, read_wav, MusicFeatures};
use crate::pddm::{
    generate_long, hold_fill, train_pddm, Denoiser, LongOptions, OracleDenoiser, PddmTrainConfig,
    TrainExample, TransformerDenoiser, TransformerDenoiserConfig,
};
use crate::vq::{decode, tokenize, train_vq, VqModel, VqTrainConfig};

pub use config::{PipelineConfig, SEED_ENV};
pub use synth::{beat_frames, synth_data, synth_pair, Manifest, PairEntry, SynthOptions, SyntheticPair, GENRE_BANKS, MANIFEST};

/// Music features of a `.wav` file.
pub fn music_from_wav(path: &Path) -> Result<MusicFeatures> {
    extract_music_features(&read_wav(path)?)
}

/// Extracts features for one `.wav` or every pair of a corpus directory,
/// writing `<stem>.mfeat` files into `out_dir`. Returns the written paths.
pub fn cmd_features(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let inputs: Vec<PathBuf> = if input.is_dir() {
        let manifest = Manifest::read(input)?;
        (0..manifest.pairs.len()).map(|i| manifest.audio_path(input, i)).collect()
    } else {
        vec![input.to_path_buf()]
    };
    let mut written = Vec::with_capacity(inputs.len());
    for wav in inputs {
        let features = music_from_wav(&wav).stage("features")?;
        let stem = wav.file_stem().and_then(|s| s.to_str()).unwrap_or("music");
        let out = out_dir.join(format!("{stem}.mfeat"));
        features.write(&out)?;
        info!("{}: {} frames, {} beats", wav.display(), features.len(), features.beats().beat_frames.len());
        written.push(out);
    }
    Ok(written)
}

/// One loaded corpus pair.
#[derive(Debug, Clone)]
pub struct CorpusPair {
    pub name: String,
    pub motion: MotionSequence,
    pub music: MusicFeatures,
    pub genre: GenreId,
}

/// Reads every pair of a corpus directory, computing music features.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusPair>> {
    let manifest = Manifest::read(dir)?;
    (0..manifest.pairs.len())
        .map(|i| {
            let entry = &manifest.pairs[i];
            let motion = read_motion(&manifest.motion_path(dir, i))?;
            let music = music_from_wav(&manifest.audio_path(dir, i))?;
            if music.len() != motion.len() {
                return Err(Error::data(format!(
                    "{}: {} music frames but {} motion frames",
                    entry.name,
                    music.len(),
                    motion.len()
                )));
            }
            Ok(CorpusPair {
                name: entry.name.clone(),
                motion,
                music,
                genre: GenreId(entry.genre),
            })
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Mean of the first and last tenth of a loss curve; the end must be lower.
fn check_progress(what: &str, losses: &[f64]) -> Result<(f64, f64)> {
    let w = (losses.len() / 10).max(1);
    let (start, end) = (mean(&losses[..w.min(losses.len())]), mean(&losses[losses.len().saturating_sub(w)..]));
    if !(end < start) {
        return Err(Error::ModelFailure(format!("{what} training did not reduce its loss ({start:.5} → {end:.5})")));
    }
    Ok((start, end))
}

/// Outcome of a training command.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub start_loss: f64,
    pub end_loss: f64,
    pub losses: Vec<f64>,
}

pub fn vq_config(cfg: &PipelineConfig) -> VqTrainConfig {
    VqTrainConfig {
        codebook_size: cfg.codebook_size,
        latent_dim: cfg.latent_dim,
        rate: cfg.rate,
        steps: cfg.vq_steps,
        seed: cfg.seed,
        ..Default::default()
    }
}

pub fn cmd_train_vq(corpus: &Path, cfg: &PipelineConfig, out: &Path) -> Result<TrainSummary> {
    let pairs = load_corpus(corpus).stage("load corpus")?;
    let coarse: Vec<CoarseMotion> = pairs.iter().map(|p| extract_coarse(&p.motion)).collect();
    let (model, report) = train_vq(&coarse, &vq_config(cfg)).stage("train vq")?;
    if !(report.final_mse < report.initial_mse) {
        return Err(Error::ModelFailure(format!(
            "vq reconstruction did not improve ({:.5} → {:.5})",
            report.initial_mse, report.final_mse
        )));
    }
    model.save(out)?;
    info!("vq: mse {:.5} → {:.5}, saved {}", report.initial_mse, report.final_mse, out.display());
    Ok(TrainSummary {
        checkpoint: out.to_path_buf(),
        start_loss: report.initial_mse,
        end_loss: report.final_mse,
        losses: report.losses,
    })
}

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Config(format!("{key} is not set")))
}

/// Token sequences of a corpus under a trained codebook.
pub fn gpt_examples(pairs: &[CorpusPair], vq: &VqModel) -> Result<Vec<GptExample>> {
    pairs
        .iter()
        .map(|p| {
            Ok(GptExample {
                tokens: tokenize(&extract_coarse(&p.motion), &vq.coder, &vq.codebook)?,
                music: p.music.clone(),
                genre: p.genre,
            })
        })
        .collect()
}

pub fn cmd_train_gpt(corpus: &Path, cfg: &PipelineConfig, out: &Path) -> Result<TrainSummary> {
    let vq = VqModel::load(&require(&cfg.vq_checkpoint, "vq_checkpoint")?)?;
    let pairs = load_corpus(corpus).stage("load corpus")?;
    let examples = gpt_examples(&pairs, &vq).stage("tokenize")?;
    let train = GptTrainConfig {
        model: TinyGptConfig {
            codebook_size: vq.codebook.size(),
            genres: cfg.genres.len(),
            frames_per_token: cfg.rate,
            ..Default::default()
        },
        steps: cfg.gpt_steps,
        seed: cfg.seed,
        ..Default::default()
    };
    let (model, report) = train_gpt(&examples, &train).stage("train gpt")?;
    let (start, end) = check_progress("gpt", &report.losses)?;
    let uniform = ((vq.codebook.size() + 1) as f64).ln();
    info!("gpt: final nll {:.4} (uniform {uniform:.4})", report.final_nll);
    model.save(out)?;
    Ok(TrainSummary {
        checkpoint: out.to_path_buf(),
        start_loss: start,
        end_loss: end,
        losses: report.losses,
    })
}

/// Training example for the denoiser: the motion with its hold-filled
/// primitive prior, built exactly as sampling builds one.
pub fn pddm_example(pair: &CorpusPair, skeleton: &Skeleton, n: usize) -> Result<TrainExample> {
    let usable = pair.motion.len() / n * n;
    let motion = pair.motion.slice(0, usable);
    let music = pair.music.slice(0, usable);
    let prims = extract_primitives(&motion, skeleton, &music.beats(), n)?;
    Ok(TrainExample {
        prior: {
            let (canvas, mask) = build_primitive_canvas(&prims, usable, n)?;
            hold_filled_prior(&canvas, &mask, n)
        },
        motion: motion.data,
        music: music.data,
        genre: pair.genre,
    })
}

pub fn cmd_train_pddm(corpus: &Path, cfg: &PipelineConfig, out: &Path) -> Result<TrainSummary> {
    let skeleton = cfg.load_skeleton()?;
    let pairs = load_corpus(corpus).stage("load corpus")?;
    let examples: Vec<TrainExample> = pairs
        .iter()
        .map(|p| pddm_example(p, &skeleton, cfg.segment_length))
        .collect::<Result<_>>()
        .stage("primitives")?;
    let train = PddmTrainConfig {
        model: TransformerDenoiserConfig {
            genres: cfg.genres.len(),
            ..Default::default()
        },
        schedule: cfg.schedule()?,
        steps: cfg.pddm_steps,
        seed: cfg.seed,
        ..Default::default()
    };
    let (model, disc, report) = train_pddm(&examples, &skeleton, &train).stage("train pddm")?;
    let (start, end) = check_progress("pddm", &report.recon)?;
    model.save(out, Some(&disc))?;
    info!("pddm: recon {start:.5} → {end:.5}, saved {}", out.display());
    Ok(TrainSummary {
        checkpoint: out.to_path_buf(),
        start_loss: start,
        end_loss: end,
        losses: report.recon,
    })
}

/// Embeds a coarse dance into the full layout standing at rest height, with
/// contact labels recomputed for that height.
pub fn lift_standing(coarse: &CoarseMotion, skeleton: &Skeleton) -> Result<MotionSequence> {
    let mut seq = lift_coarse_to_full(coarse, skeleton)?;
    seq.data.column_mut(ROOT_TRANSLATION_COLS.start + 1).fill(STANDING_ROOT_HEIGHT);
    let contacts = detect_foot_contacts(&sequence_positions(&seq, skeleton)?, seq.fps);
    seq.data.slice_mut(s![.., CONTACT_COLS]).assign(&contacts);
    Ok(seq)
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    pub genre: String,
    /// Reference motion for oracle mode: it supplies the coarse dance, the
    /// primitives and the denoiser, so no checkpoint is needed.
    pub oracle: Option<PathBuf>,
    pub bvh: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateReport {
    pub frames: usize,
    pub key_motions: usize,
    /// Wall time per stage in seconds.
    pub timings: Vec<(&'static str, f64)>,
}

impl GenerateReport {
    pub fn timing_table(&self) -> String {
        let mut out = String::new();
        for (stage, secs) in &self.timings {
            out.push_str(&format!("{stage:<12}{secs:>10.3} s\n"));
        }
        let total: f64 = self.timings.iter().map(|t| t.1).sum();
        out.push_str(&format!("{:<12}{total:>10.3} s\n", "total"));
        out
    }
}

struct Timer {
    timings: Vec<(&'static str, f64)>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push((stage, (now - self.last).as_secs_f64()));
        self.last = now;
    }
}

/// Generates a dance for `music` (a `.wav`) and writes it to `out`.
///
/// The output covers the music rounded down to whole segments.
pub fn cmd_generate(music_path: &Path, cfg: &PipelineConfig, opts: &GenerateOptions, out: &Path) -> Result<GenerateReport> {
    cfg.validate()?;
    let skeleton = cfg.load_skeleton()?;
    let genre = cfg.genre_id(&opts.genre)?;
    let n = cfg.segment_length;
    let mut timer = Timer::new();

    let full = music_from_wav(music_path).stage("features")?;
    let len = full.len() / n * n;
    if len == 0 {
        return Err(Error::SequenceTooShort { need: n, got: full.len() }).stage("features");
    }
    let music = full.slice(0, len);
    timer.lap("features");

    let (primitives, denoiser): (_, Box<dyn Denoiser>) = match &opts.oracle {
        Some(reference_path) => {
            let reference = read_motion(reference_path).stage("reference")?;
            if reference.len() < len {
                return Err(Error::data(format!(
                    "oracle reference has {} frames, generation needs {len}",
                    reference.len()
                )))
                .stage("reference");
            }
            let reference = reference.slice(0, len);
            timer.lap("tokens");
            let prims = extract_primitives(&reference, &skeleton, &music.beats(), n).stage("primitives")?;
            timer.lap("primitives");
            (prims, Box::new(OracleDenoiser::new(reference.data)))
        }
        None => {
            let vq = VqModel::load(&require(&cfg.vq_checkpoint, "vq_checkpoint")?)?;
            let gpt = TinyGpt::load(&require(&cfg.gpt_checkpoint, "gpt_checkpoint")?)?;
            let (pddm, _) = TransformerDenoiser::load(&require(&cfg.pddm_checkpoint, "pddm_checkpoint")?, skeleton.clone())?;
            let sampling = Sampling {
                temperature: cfg.temperature,
                top_k: cfg.top_k,
            };
            let tokens = generate_choreography(
                &gpt,
                &music,
                genre,
                len / cfg.rate,
                cfg.rate,
                gpt.config.max_len - 1,
                sampling,
                cfg.seed,
            )
            .stage("tokens")?;
            timer.lap("tokens");
            let coarse = decode(&tokens, &vq.codebook, &vq.coder).stage("decode")?;
            let coarse = CoarseMotion::new(coarse.data.slice(s![..len, ..]).to_owned())?;
            let lifted = lift_standing(&coarse, &skeleton).stage("lift")?;
            let prims = extract_primitives(&lifted, &skeleton, &music.beats(), n).stage("primitives")?;
            timer.lap("primitives");
            (prims, Box::new(pddm))
        }
    };

    let options = LongOptions {
        segment_length: n,
        worker_count: cfg.workers,
        seed: cfg.seed,
        guidance: cfg.guidance_for(&skeleton),
        hard_key_motions: cfg.hard_key_motions,
    };
    let dance = generate_long(&music, genre, &primitives, &cfg.schedule()?, denoiser.as_ref(), &options).stage("sampling")?;
    timer.lap("sampling");

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("write")?;
    }
    write_motion(out, &dance).stage("write")?;
    if let Some(bvh) = &opts.bvh {
        write_bvh(bvh, &dance, &skeleton).stage("write")?;
    }
    timer.lap("write");
    Ok(GenerateReport {
        frames: dance.len(),
        key_motions: primitives.key_motions.len(),
        timings: timer.timings,
    })
}

fn list(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

/// Beat frames for `stem` from `<stem>.mfeat` or `<stem>.wav` in `dir`.
fn music_beats_for(dir: &Path, stem: &str) -> Result<Option<Vec<usize>>> {
    let mfeat = dir.join(format!("{stem}.mfeat"));
    let wav = dir.join(format!("{stem}.wav"));
    let music = if mfeat.exists() {
        MusicFeatures::read(&mfeat)?
    } else if wav.exists() {
        music_from_wav(&wav)?
    } else {
        return Ok(None);
    };
    Ok(Some(music.beats().beat_frames))
}

/// Evaluates every `.mseq` in `generated` against every `.mseq` in
/// `reference`. BAS is reported when `music_dir` holds matching music for
/// every generated file.
pub fn cmd_evaluate(generated: &Path, reference: &Path, music_dir: Option<&Path>, cfg: &PipelineConfig) -> Result<EvalReport> {
    let skeleton = cfg.load_skeleton()?;
    let load = |dir: &Path| -> Result<Vec<(String, MotionSequence)>> {
        list(dir, "mseq")?
            .into_iter()
            .map(|p| {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                Ok((stem, read_motion(&p)?))
            })
            .collect()
    };
    let gen = load(generated)?;
    let refs: Vec<MotionSequence> = load(reference)?.into_iter().map(|(_, s)| s).collect();
    let beats = match music_dir {
        None => None,
        Some(dir) => gen
            .iter()
            .map(|(stem, _)| music_beats_for(dir, stem))
            .collect::<Result<Option<Vec<_>>>>()?,
    };
    let gen: Vec<MotionSequence> = gen.into_iter().map(|(_, s)| s).collect();
    evaluate(&gen, &refs, &skeleton, beats.as_deref()).stage("evaluate")
}

pub fn cmd_export_bvh(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let skeleton = cfg.load_skeleton()?;
    write_bvh(out, &read_motion(input)?, &skeleton)
}

/// `L×139` hold-filled prior for a whole sequence, segment by segment.
pub fn hold_filled_prior(canvas: &Array2<f64>, mask: &[bool], n: usize) -> Array2<f64> {
    let mut out = canvas.clone();
    let len = canvas.nrows();
    for start in (0..len).step_by(n.max(1)) {
        let end = (start + n).min(len);
        let filled = hold_fill(canvas.slice(s![start..end, ..]), &mask[start..end]);
        out.slice_mut(s![start..end, ..]).assign(&filled);
    }
    out
}
