// Train on an online split, then rank the held-out split by the posterior
// mean and report Recall@k.
//
//     cargo run --release --example recall_eval

use dialog_bandit::linalg::Matrix;
use dialog_bandit::{
    make_synthetic, recall_at_k, run_replay, AgentConfig, FeatureMapKind, PolicyKind, PosteriorState, Result,
};

fn run_example() -> Result<Vec<f64>> {
    let d = 4;
    let (dataset, embeddings, truth) = make_synthetic(d, 300, 10, 5)?;
    let (online, eval) = dataset.split(200, 100)?;

    let mut agent = AgentConfig::new(PolicyKind::ThompsonSampling, FeatureMapKind::Bilinear, d)
        .seed(2)
        .build()?;
    run_replay(&online, &embeddings, &mut agent, 1500, 2, 9)?;

    let mut recalls = Vec::new();
    for k in [1, 2, 5] {
        let r = recall_at_k(&agent, &eval, &embeddings, k)?;
        println!("trained  R@{k} = {r:.2}");
        recalls.push(r);
    }

    // an agent whose mean is the true matrix ranks every true response first
    let mut oracle = AgentConfig::new(PolicyKind::Greedy, FeatureMapKind::Bilinear, d).build()?;
    oracle.set_posterior(PosteriorState::from_precision(truth.flattened(), Matrix::identity(d * d), 1.0)?)?;
    println!("oracle   R@1 = {:.2}", recall_at_k(&oracle, &eval, &embeddings, 1)?);
    Ok(recalls)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
