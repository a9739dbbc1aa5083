// Replay a synthetic bilinear environment with three agents and compare
// their average cumulative regret.
//
//     cargo run --release --example thompson_replay

use dialog_bandit::{make_synthetic, run_replay, AgentConfig, FeatureMapKind, PolicyKind, Result};

fn run_example() -> Result<[f64; 3]> {
    let d = 4;
    let (dataset, embeddings, _truth) = make_synthetic(d, 200, 10, 1)?;
    let rounds = 1500;

    let agents = [
        (PolicyKind::ThompsonSampling, FeatureMapKind::Bilinear),
        (PolicyKind::ThompsonSampling, FeatureMapKind::Linear),
        (PolicyKind::Random, FeatureMapKind::Linear),
    ];
    let mut finals = [0.0; 3];
    for (slot, (policy, map)) in agents.into_iter().enumerate() {
        let mut agent = AgentConfig::new(policy, map, d).seed(11).build()?;
        let outcome = run_replay(&dataset, &embeddings, &mut agent, rounds, 1, 3)?;
        let curve = &outcome.curve;
        println!(
            "{:>6}/{:<8} R(100) = {:.3}  R(500) = {:.3}  R({rounds}) = {:.3}",
            policy.name(),
            map.name(),
            curve.at(100).unwrap(),
            curve.at(500).unwrap(),
            curve.last().unwrap()
        );
        finals[slot] = curve.last().unwrap();
    }

    let last = run_replay(
        &dataset,
        &embeddings,
        &mut AgentConfig::new(PolicyKind::ThompsonSampling, FeatureMapKind::Bilinear, d).build()?,
        3,
        2,
        0,
    )?;
    for log in &last.logs {
        println!("round {}: {} -> {:?} rewards {:?}", log.round, log.context_id, log.returned, log.rewards);
    }
    Ok(finals)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
