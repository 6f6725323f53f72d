//! Global choreography: autoregressive token generation conditioned on music
//! and genre, and dance-primitive extraction from the decoded coarse dance.

mod gpt;
mod primitives;

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::music::MusicFeatures;
use crate::vq::TokenSequence;

pub use gpt::{train_gpt, GptExample, GptTrainConfig, GptTrainReport, TinyGpt, TinyGptConfig};
pub use primitives::{
    build_primitive_canvas, detect_dance_beats, extract_primitives, primitives_from_beats,
    speed_minima, BoundaryMotion, DancePrimitives, KeyMotion, BEAT_MIN_SEPARATION, HALF_WINDOW,
    PRIMITIVE_FRAMES, SMOOTHING_WINDOW,
};

pub const DEFAULT_MAX_TOKENS: usize = 128;

/// Index into the configured genre list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GenreId(pub usize);

/// Next-token distribution over `K` codebook entries plus End (id `K`).
pub trait SequenceModel: Sync {
    fn codebook_size(&self) -> usize;

    /// Unnormalised `(K+1)` logits for the token following `prefix`.
    fn next_token_logits(&self, music: &MusicFeatures, genre: GenreId, prefix: &[usize]) -> Result<Vec<f64>>;

    /// Teacher-forced logits: row `i` predicts `target[i]` from `target[..i]`.
    fn sequence_logits(&self, music: &MusicFeatures, genre: GenreId, target: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((target.len(), self.codebook_size() + 1));
        for i in 0..target.len() {
            let row = self.next_token_logits(music, genre, &target[..i])?;
            for (dst, v) in out.row_mut(i).iter_mut().zip(row) {
                *dst = v;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    /// Values at or below `1e-8` decode greedily.
    pub temperature: f64,
    /// Number of highest logits kept; 0 keeps all.
    pub top_k: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 0,
        }
    }
}

/// Plays back a fixed token script, then End.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    pub codebook_size: usize,
    pub script: Vec<usize>,
}

impl SequenceModel for ScriptedModel {
    fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    fn next_token_logits(&self, _: &MusicFeatures, _: GenreId, prefix: &[usize]) -> Result<Vec<f64>> {
        let next = self.script.get(prefix.len()).copied().unwrap_or(self.codebook_size);
        let mut logits = vec![0.0; self.codebook_size + 1];
        logits[next] = 50.0;
        Ok(logits)
    }
}

fn pick(logits: &[f64], sampling: Sampling, rng: &mut ChaCha8Rng) -> Result<usize> {
    let argmax = || {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    };
    if sampling.temperature <= 1e-8 {
        return Ok(argmax());
    }
    let mut order: Vec<usize> = (0..logits.len()).filter(|&i| logits[i] > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    if sampling.top_k > 0 {
        order.truncate(sampling.top_k);
    }
    let max = logits[order[0]];
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| ((logits[i] - max) / sampling.temperature).exp())
        .collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::ModelFailure(e.to_string()))?;
    Ok(order[dist.sample(rng)])
}

fn generate_with(
    model: &dyn SequenceModel,
    music: &MusicFeatures,
    genre: GenreId,
    max_len: usize,
    min_content: usize,
    sampling: Sampling,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let end = model.codebook_size();
    let mut ids = Vec::with_capacity(max_len);
    while ids.len() < max_len {
        let mut logits = model.next_token_logits(music, genre, &ids)?;
        if logits.len() != end + 1 {
            return Err(Error::ModelFailure(format!("expected {} logits, got {}", end + 1, logits.len())));
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::ModelFailure(format!("non-finite logits at position {}", ids.len())));
        }
        if ids.len() < min_content {
            logits[end] = f64::NEG_INFINITY;
        }
        let next = pick(&logits, sampling, rng)?;
        ids.push(next);
        if next == end {
            break;
        }
    }
    Ok(TokenSequence { ids })
}

/// Samples tokens until End or `max_len`. Deterministic for a fixed seed.
pub fn generate_tokens(
    model: &dyn SequenceModel,
    music: &MusicFeatures,
    genre: GenreId,
    max_len: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<TokenSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(model, music, genre, max_len, 0, sampling, &mut rng)
}

/// Generates exactly `token_count` content tokens (plus End) for music of any
/// length: chunks of at most `max_len` tokens, each conditioned on its own
/// music span, with End suppressed until the chunk is full.
pub fn generate_choreography(
    model: &dyn SequenceModel,
    music: &MusicFeatures,
    genre: GenreId,
    token_count: usize,
    frames_per_token: usize,
    max_len: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<TokenSequence> {
    let end = model.codebook_size();
    let mut ids = Vec::with_capacity(token_count + 1);
    let mut chunk = 0u64;
    while ids.len() < token_count {
        let need = (token_count - ids.len()).min(max_len);
        let start = ids.len() * frames_per_token;
        let stop = ((ids.len() + need) * frames_per_token).min(music.len());
        let span = music.slice(start.min(music.len()), stop.max(start.min(music.len())));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let part = generate_with(model, &span, genre, need, need, sampling, &mut rng)?;
        ids.extend(part.content(end).iter().copied());
        chunk += 1;
    }
    ids.push(end);
    Ok(TokenSequence { ids })
}

/// Mean teacher-forced negative log-likelihood of `target`.
pub fn gpt_loss(
    model: &dyn SequenceModel,
    music: &MusicFeatures,
    genre: GenreId,
    target: &TokenSequence,
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::EmptySequence);
    }
    let logits = model.sequence_logits(music, genre, &target.ids)?;
    let mut total = 0.0;
    for (row, &t) in logits.outer_iter().zip(&target.ids) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[t];
    }
    Ok(total / target.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::music::FEATURE_DIMS;

    fn music(len: usize) -> MusicFeatures {
        MusicFeatures::new(30.0, Array2::zeros((len, FEATURE_DIMS))).unwrap()
    }

    /// Logits depend on the prefix so greedy decoding follows a known path.
    struct Lookup;

    impl SequenceModel for Lookup {
        fn codebook_size(&self) -> usize {
            4
        }

        fn next_token_logits(&self, _: &MusicFeatures, _: GenreId, prefix: &[usize]) -> Result<Vec<f64>> {
            let s: usize = prefix.iter().sum::<usize>() + prefix.len();
            Ok((0..5).map(|i| ((i * 7 + s * 3) % 11) as f64 * 0.3).collect())
        }
    }

    struct Broken;

    impl SequenceModel for Broken {
        fn codebook_size(&self) -> usize {
            2
        }

        fn next_token_logits(&self, _: &MusicFeatures, _: GenreId, _: &[usize]) -> Result<Vec<f64>> {
            Ok(vec![0.0, f64::NAN, 0.0])
        }
    }

    #[test]
    fn scripted_models() {
        let m = music(8);
        let end_only = ScriptedModel {
            codebook_size: 8,
            script: vec![],
        };
        let t = generate_tokens(&end_only, &m, GenreId(0), 128, Sampling::default(), 1).unwrap();
        assert_eq!(t.ids, vec![8]);
        let fives = ScriptedModel {
            codebook_size: 8,
            script: vec![5, 5, 5],
        };
        let t = generate_tokens(&fives, &m, GenreId(0), 128, Sampling::default(), 1).unwrap();
        assert_eq!(t.ids, vec![5, 5, 5, 8]);
        let t = generate_tokens(&fives, &m, GenreId(0), 2, Sampling::default(), 1).unwrap();
        assert_eq!(t.ids, vec![5, 5]);
    }

    #[test]
    fn greedy_decoding_matches_argmax_oracle() {
        let m = music(8);
        let greedy = Sampling {
            temperature: 0.0,
            top_k: 0,
        };
        let t = generate_tokens(&Lookup, &m, GenreId(0), 10, greedy, 3).unwrap();
        let mut prefix = Vec::new();
        for &id in &t.ids {
            let logits = Lookup.next_token_logits(&m, GenreId(0), &prefix).unwrap();
            let best = (0..5).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
            assert_eq!(id, best);
            prefix.push(id);
        }
    }

    #[test]
    fn sampling_is_reproducible_and_respects_top_k() {
        let m = music(8);
        let s = Sampling {
            temperature: 1.0,
            top_k: 2,
        };
        let a = generate_tokens(&Lookup, &m, GenreId(0), 30, s, 42).unwrap();
        let b = generate_tokens(&Lookup, &m, GenreId(0), 30, s, 42).unwrap();
        assert_eq!(a, b);
        let mut prefix = Vec::new();
        for &id in &a.ids {
            let logits = Lookup.next_token_logits(&m, GenreId(0), &prefix).unwrap();
            let rank = logits.iter().filter(|&&v| v > logits[id]).count();
            assert!(rank < 2);
            prefix.push(id);
        }
    }

    #[test]
    fn non_finite_logits_are_a_model_failure() {
        let r = generate_tokens(&Broken, &music(4), GenreId(0), 4, Sampling::default(), 0);
        assert!(matches!(r, Err(Error::ModelFailure(_))));
    }

    #[test]
    fn chunked_generation_hits_the_requested_length() {
        let fives = ScriptedModel {
            codebook_size: 8,
            script: vec![5, 5, 5],
        };
        let t = generate_choreography(&fives, &music(400), GenreId(0), 100, 4, 32, Sampling::default(), 9).unwrap();
        assert_eq!(t.len(), 101);
        assert_eq!(*t.ids.last().unwrap(), 8);
        assert!(t.ids[..100].iter().all(|&i| i < 8));
    }

    #[test]
    fn loss_oracles() {
        let m = music(8);
        let exact = ScriptedModel {
            codebook_size: 64,
            script: vec![3, 9],
        };
        let target = TokenSequence::new(vec![3, 9, 64], 64).unwrap();
        assert!(gpt_loss(&exact, &m, GenreId(0), &target).unwrap() < 1e-15);

        struct Uniform;
        impl SequenceModel for Uniform {
            fn codebook_size(&self) -> usize {
                64
            }
            fn next_token_logits(&self, _: &MusicFeatures, _: GenreId, _: &[usize]) -> Result<Vec<f64>> {
                Ok(vec![0.25; 65])
            }
        }
        let l = gpt_loss(&Uniform, &m, GenreId(0), &target).unwrap();
        assert!((l - 65f64.ln()).abs() < 1e-12);
        assert!(matches!(
            gpt_loss(&Uniform, &m, GenreId(0), &TokenSequence { ids: vec![] }),
            Err(Error::EmptySequence)
        ));

        let target = TokenSequence::new(vec![1, 3, 0, 4], 4).unwrap();
        let l = gpt_loss(&Lookup, &m, GenreId(0), &target).unwrap();
        let mut oracle = 0.0;
        for i in 0..4 {
            let logits = Lookup.next_token_logits(&m, GenreId(0), &target.ids[..i]).unwrap();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            oracle -= (logits[target.ids[i]].exp() / z).ln();
        }
        assert!((l - oracle / 4.0).abs() < 1e-8);
    }
}
