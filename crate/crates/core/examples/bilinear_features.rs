// Linear and bilinear feature maps, and why the bilinear one recovers cMuᵀ.
//
//     cargo run --example bilinear_features

use dialog_bandit::{bilinear_features, concat_features, FeatureMap, FeatureMapKind, Result};

fn run_example() -> Result<f64> {
    let c = [0.5, -1.0, 2.0];
    let u = [1.0, 0.25, -0.5];
    let m = [[1.0, 0.0, 2.0], [0.0, -1.0, 0.5], [3.0, 1.0, 0.0]];

    let linear = concat_features(&c, &u)?;
    println!("linear  φ = {:?}", linear.as_slice());

    let phi = bilinear_features(&c, &u)?;
    println!("bilinear φ has {} entries, φ[i·L + j] = c_i·u_j", phi.len());

    // dot with M flattened row by row is the bilinear score
    let flat: Vec<f64> = m.concat();
    let via_features: f64 = phi.as_slice().iter().zip(&flat).map(|(a, b)| a * b).sum();
    let mut direct = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            direct += c[i] * m[i][j] * u[j];
        }
    }
    println!("φ·vec(M) = {via_features:.6}, cMuᵀ = {direct:.6}");

    // the output dimension is capped; L = 80 would need 6400 weights
    let too_wide = FeatureMap::new(FeatureMapKind::Bilinear, 80, 4096);
    println!("L = 80 bilinear: {}", too_wide.unwrap_err());

    Ok((via_features - direct).abs())
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
