// Fit a Bayesian logistic regression by damped Newton and sample from its
// Laplace posterior.
//
//     cargo run --example laplace_posterior

use dialog_bandit::logreg::gradient;
use dialog_bandit::{fit_map, predict, sample_weights, ObservationHistory, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run_example() -> Result<Vec<f64>> {
    let truth = [1.5, -2.0, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut history = ObservationHistory::new(3);
    for _ in 0..400 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
        let reward = rng.random_bool(1.0 / (1.0 + (-z).exp()));
        history.push_raw(x, reward)?;
    }

    let posterior = fit_map(&history, 1.0, None)?;
    let g = gradient(posterior.mean(), &history, 1.0)?;
    println!(
        "MAP mean {:.3?} after {} Newton steps (|∇J|∞ = {:.1e})",
        posterior.mean(),
        posterior.iterations(),
        g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    );

    // marginal standard deviations from the diagonal of H⁻¹
    for i in 0..3 {
        let mut e = vec![0.0; 3];
        e[i] = 1.0;
        let var = posterior.apply_covariance(&e)?[i];
        println!("w[{i}]: sd {:.3}", var.sqrt());
    }

    for _ in 0..3 {
        let w = sample_weights(&posterior, &mut rng);
        println!("draw {:.3?}  p(reward | x = [1, 0, 0]) = {:.3}", w, predict(&w, &[1.0, 0.0, 0.0])?);
    }
    Ok(posterior.mean().to_vec())
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
