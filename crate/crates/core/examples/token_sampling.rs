//! Samples choreographic tokens: a scripted model shows the chunked decoding
//! contract, and an untrained tiny GPT shows temperature and top-k sampling.
//!
//! ```text
//! cargo run --example token_sampling
//! ```

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lodgepp::choreo::{generate_choreography, generate_tokens, GenreId, Sampling, ScriptedModel, TinyGpt, TinyGptConfig};
use lodgepp::music::{MusicFeatures, FEATURE_DIMS, MUSIC_FPS};

fn main() -> lodgepp::Result<()> {
    let music = MusicFeatures::new(MUSIC_FPS, Array2::zeros((256, FEATURE_DIMS)))?;

    let scripted = ScriptedModel {
        codebook_size: 8,
        script: vec![3, 1, 4, 1, 5],
    };
    let greedy = Sampling {
        temperature: 0.0,
        top_k: 0,
    };
    let short = generate_tokens(&scripted, &music, GenreId(0), 16, greedy, 0)?;
    println!("scripted, free decoding: {:?}", short.ids);
    // Chunked decoding suppresses End until each chunk is full.
    let long = generate_choreography(&scripted, &music, GenreId(0), 12, 4, 5, greedy, 0)?;
    println!("scripted, 12 tokens in chunks of 5: {:?}", long.ids);

    let config = TinyGptConfig {
        codebook_size: 16,
        width: 32,
        ..Default::default()
    };
    let gpt = TinyGpt::new(&mut ChaCha8Rng::seed_from_u64(1), config)?;
    for sampling in [
        Sampling { temperature: 1.0, top_k: 0 },
        Sampling { temperature: 0.7, top_k: 4 },
    ] {
        let a = generate_choreography(&gpt, &music, GenreId(2), 16, 4, 128, sampling, 9)?;
        let b = generate_choreography(&gpt, &music, GenreId(2), 16, 4, 128, sampling, 9)?;
        assert_eq!(a, b, "sampling is deterministic for a fixed seed");
        println!("untrained GPT, T={} top-k={}: {:?}", sampling.temperature, sampling.top_k, a.content(16));
    }
    Ok(())
}
