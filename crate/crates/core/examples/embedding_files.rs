// The on-disk formats: dataset TSV, EMB1 embeddings and posterior dumps.
//
//     cargo run --example embedding_files

use std::fs;

use dialog_bandit::{
    load_dataset, load_embeddings, make_synthetic, run_replay, write_embeddings, AgentConfig, FeatureMapKind,
    PolicyKind, PosteriorState, Result,
};

fn run_example() -> Result<usize> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let (dataset, embeddings, _) = make_synthetic(3, 5, 4, 0)?;

    let tsv = dir.path().join("dataset.tsv");
    dataset.write_tsv(&tsv)?;
    println!("{}", fs::read_to_string(&tsv).expect("written").lines().take(3).collect::<Vec<_>>().join("\n"));
    assert_eq!(load_dataset(&tsv)?, dataset);

    // EMB1: magic, u32 dim, u32 count, then (u32 id length, id, dim × f32) records
    let emb = dir.path().join("embeddings.emb");
    write_embeddings(&embeddings, &emb)?;
    let bytes = fs::read(&emb).expect("written");
    println!("EMB1 file: {} bytes for {} vectors of dim {}", bytes.len(), embeddings.len(), embeddings.dim());
    assert_eq!(load_embeddings(&emb)?, embeddings);

    let truncated = dir.path().join("truncated.emb");
    fs::write(&truncated, &bytes[..bytes.len() - 3]).expect("written");
    println!("truncated file: {}", load_embeddings(&truncated).unwrap_err());

    let mut agent = AgentConfig::new(PolicyKind::ThompsonSampling, FeatureMapKind::Linear, 3).build()?;
    run_replay(&dataset, &embeddings, &mut agent, 50, 1, 0)?;
    let dump = agent.posterior().to_bytes();
    let back = PosteriorState::from_bytes(&dump)?;
    println!("posterior dump: {} bytes, mean {:.3?}", dump.len(), back.mean());
    assert_eq!(back.mean(), agent.posterior().mean());
    Ok(bytes.len())
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
