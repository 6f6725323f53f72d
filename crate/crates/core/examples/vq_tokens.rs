//! Trains a small VQ-VAE on coarse synthetic dance and turns a clip into
//! choreographic tokens and back.
//!
//! ```text
//! cargo run --release --example vq_tokens
//! ```

use lodgepp::motion::{extract_coarse, Skeleton};
use lodgepp::pipeline::{synth_pair, SynthOptions};
use lodgepp::vq::{decode, tokenize, train_vq, VqTrainConfig};

fn main() -> lodgepp::Result<()> {
    let skeleton = Skeleton::default();
    let opts = SynthOptions {
        count: 12,
        seed: 5,
        ..Default::default()
    };
    let corpus = (0..opts.count)
        .map(|i| synth_pair(&opts, i, &skeleton).map(|p| extract_coarse(&p.motion)))
        .collect::<lodgepp::Result<Vec<_>>>()?;

    let cfg = VqTrainConfig {
        codebook_size: 32,
        hidden: 32,
        steps: 400,
        ..Default::default()
    };
    let (model, report) = train_vq(&corpus, &cfg)?;
    println!("reconstruction MSE {:.4} → {:.4}", report.initial_mse, report.final_mse);

    let tokens = tokenize(&corpus[0], &model.coder, &model.codebook)?;
    let content = tokens.content(model.codebook.size());
    println!("{} frames → {} tokens (End = {})", corpus[0].len(), content.len(), model.codebook.end_id());
    println!("first tokens: {:?}", &content[..content.len().min(16)]);

    let back = decode(&tokens, &model.codebook, &model.coder)?;
    let n = back.len().min(corpus[0].len());
    let mse = (&back.data.slice(ndarray::s![..n, ..]) - &corpus[0].data.slice(ndarray::s![..n, ..]))
        .mapv(|v| v * v)
        .mean()
        .unwrap_or(0.0);
    println!("round-trip MSE on clip 0: {mse:.4}");
    Ok(())
}
