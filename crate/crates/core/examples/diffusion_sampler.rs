//! Builds a residual-shifting schedule, noises a clean segment towards its
//! primitive prior and walks the reverse chain with an oracle denoiser.
//!
//! ```text
//! cargo run --example diffusion_sampler
//! ```

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lodgepp::choreo::GenreId;
use lodgepp::music::FEATURE_DIMS;
use lodgepp::pddm::{denoise_step, forward_marginal, init_from_primitives, make_schedule, Condition, OracleDenoiser};

fn rms(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|v| v * v).mean().unwrap_or(0.0).sqrt()
}

fn main() -> lodgepp::Result<()> {
    let schedule = make_schedule(50, 1e-3, 0.999, 1.0, 0.1)?;
    println!("eta: {:.4} … {:.4} … {:.4}", schedule.eta[1], schedule.eta[25], schedule.eta[50]);
    println!("alpha sums to eta_T exactly: {}", schedule.alpha[1..].iter().sum::<f64>() == schedule.eta[50]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gaussian = |r, c| Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal));
    let (d0, dp) = (gaussian(32, 12), gaussian(32, 12));
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for t in [1, 10, 25, 50] {
        let d_t = forward_marginal(&d0, &dp, t, &schedule, &mut rng)?;
        println!("t={t:>2}: rms to clean {:.3}, to prior {:.3}", rms(&d_t, &d0), rms(&d_t, &dp));
    }

    let cond = Condition {
        music: Array2::zeros((32, FEATURE_DIMS)),
        genre: GenreId(0),
        start_frame: 0,
    };
    let oracle = OracleDenoiser::new(d0.clone());
    let mut d = init_from_primitives(&dp, &schedule, &mut rng);
    for t in (1..=schedule.steps).rev() {
        d = denoise_step(&d, &dp, &cond, t, &schedule, &oracle, None, &mut rng)?;
        if t % 10 == 1 {
            println!("after step {t:>2}: rms to clean {:.2e}", rms(&d, &d0));
        }
    }
    Ok(())
}
