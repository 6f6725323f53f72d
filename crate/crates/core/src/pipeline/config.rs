//! Flat `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so typos surface early. Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `skeleton` | built-in | skeleton table file |
//! | `genres` | `g0,g1,g2,g3` | comma-separated genre names |
//! | `seed` | 0 | master seed (overridden by `LODGE_SEED`) |
//! | `workers` | 1 | segment sampling threads |
//! | `segment_length` | 128 | frames per diffusion segment |
//! | `steps`, `eta1`, `eta_t`, `p`, `k` | 50, 1e-3, 0.999, 1, 0.1 | diffusion schedule |
//! | `guidance` | true | contact and penetration guidance |
//! | `a_con`, `a_pene` | 0.01, 0.1 | guidance scales |
//! | `hard_key_motions` | false | pin key motions at every step |
//! | `temperature`, `top_k` | 1.0, 0 | token sampling |
//! | `codebook_size`, `latent_dim`, `rate` | 64, 32, 4 | token codebook |
//! | `vq_steps`, `gpt_steps`, `pddm_steps` | 2000, 400, 300 | toy training lengths |
//! | `vq_checkpoint`, `gpt_checkpoint`, `pddm_checkpoint` | unset | trained models |

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::motion::Skeleton;
use crate::pddm::{make_schedule, DiffusionSchedule, Guidance};

pub const SEED_ENV: &str = "LODGE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub skeleton: Option<PathBuf>,
    pub genres: Vec<String>,
    pub seed: u64,
    pub workers: usize,
    pub segment_length: usize,
    pub steps: usize,
    pub eta1: f64,
    pub eta_t: f64,
    pub p: f64,
    pub k: f64,
    pub guidance: bool,
    pub a_con: f64,
    pub a_pene: f64,
    pub hard_key_motions: bool,
    pub temperature: f64,
    pub top_k: usize,
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub rate: usize,
    pub vq_steps: usize,
    pub gpt_steps: usize,
    pub pddm_steps: usize,
    pub vq_checkpoint: Option<PathBuf>,
    pub gpt_checkpoint: Option<PathBuf>,
    pub pddm_checkpoint: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            skeleton: None,
            genres: (0..4).map(|g| format!("g{g}")).collect(),
            seed: 0,
            workers: 1,
            segment_length: 128,
            steps: 50,
            eta1: 1e-3,
            eta_t: 0.999,
            p: 1.0,
            k: 0.1,
            guidance: true,
            a_con: crate::pddm::DEFAULT_A_CON,
            a_pene: crate::pddm::DEFAULT_A_PENE,
            hard_key_motions: false,
            temperature: 1.0,
            top_k: 0,
            codebook_size: 64,
            latent_dim: 32,
            rate: 4,
            vq_steps: 2000,
            gpt_steps: 400,
            pddm_steps: 300,
            vq_checkpoint: None,
            gpt_checkpoint: None,
            pddm_checkpoint: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative paths inside the file resolve against its directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for slot in [
            &mut cfg.skeleton,
            &mut cfg.vq_checkpoint,
            &mut cfg.gpt_checkpoint,
            &mut cfg.pddm_checkpoint,
        ] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Sets one key; used by the parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "skeleton" => self.skeleton = path(),
            "genres" => {
                self.genres = value.split(',').map(|g| g.trim().to_string()).filter(|g| !g.is_empty()).collect()
            }
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "segment_length" => self.segment_length = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "eta1" => self.eta1 = parse(key, value)?,
            "eta_t" => self.eta_t = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "guidance" => self.guidance = parse_bool(key, value)?,
            "a_con" => self.a_con = parse(key, value)?,
            "a_pene" => self.a_pene = parse(key, value)?,
            "hard_key_motions" => self.hard_key_motions = parse_bool(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "codebook_size" => self.codebook_size = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "rate" => self.rate = parse(key, value)?,
            "vq_steps" => self.vq_steps = parse(key, value)?,
            "gpt_steps" => self.gpt_steps = parse(key, value)?,
            "pddm_steps" => self.pddm_steps = parse(key, value)?,
            "vq_checkpoint" => self.vq_checkpoint = path(),
            "gpt_checkpoint" => self.gpt_checkpoint = path(),
            "pddm_checkpoint" => self.pddm_checkpoint = path(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Replaces the seed with `LODGE_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.genres.is_empty() {
            return Err(Error::Config("at least one genre is required".into()));
        }
        if self.rate == 0 || self.segment_length == 0 || !self.segment_length.is_multiple_of(2 * self.rate) {
            return Err(Error::Config(format!(
                "segment_length {} must be a positive multiple of 2·rate ({})",
                self.segment_length,
                2 * self.rate
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        for p in [&self.skeleton, &self.vq_checkpoint, &self.gpt_checkpoint, &self.pddm_checkpoint]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.eta1, self.eta_t, self.p, self.k)
    }

    pub fn load_skeleton(&self) -> Result<Skeleton> {
        match &self.skeleton {
            None => Ok(Skeleton::default()),
            Some(p) => Skeleton::from_config_str(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    pub fn guidance_for(&self, skeleton: &Skeleton) -> Option<Guidance> {
        self.guidance.then(|| Guidance {
            a_con: self.a_con,
            a_pene: self.a_pene,
            ..Guidance::new(skeleton.clone(), self.steps)
        })
    }

    /// Genre index by name or by number.
    pub fn genre_id(&self, genre: &str) -> Result<crate::choreo::GenreId> {
        if let Some(i) = self.genres.iter().position(|g| g == genre) {
            return Ok(crate::choreo::GenreId(i));
        }
        match genre.parse::<usize>() {
            Ok(i) if i < self.genres.len() => Ok(crate::choreo::GenreId(i)),
            _ => Err(Error::Config(format!("unknown genre {genre:?}"))),
        }
    }
}
