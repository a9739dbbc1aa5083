// TF-IDF vectors reduced by PCA, the text baseline's embedding.
//
//     cargo run --example tfidf_pca

use dialog_bandit::linalg::Matrix;
use dialog_bandit::text::{tokenize, PcaModel, TfidfConfig, TfidfModel};
use dialog_bandit::Result;

fn run_example() -> Result<Vec<Vec<f64>>> {
    let docs = [
        "sudo apt-get install nvidia driver",
        "the nvidia driver breaks after an update",
        "wifi drops after suspend",
        "restart network manager after suspend to get wifi back",
        "apt-get update then install the driver again",
    ];
    let corpus: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
    let model = TfidfModel::fit(&corpus, TfidfConfig::default())?;
    println!("vocabulary of {} tokens (min_df 2)", model.vocabulary_size());
    for token in ["driver", "wifi", "suspend"] {
        println!("  idf({token}) = {:.4}", model.idf(token).unwrap());
    }

    let v = model.vocabulary_size();
    let mut rows = Vec::new();
    for doc in &corpus {
        rows.extend(model.transform(doc).to_dense(v));
    }
    let pca = PcaModel::fit(&Matrix::from_row_major(docs.len(), v, rows.clone())?, 2)?;
    println!("explained variance {:.4?}", pca.explained_variance());

    let mut reduced = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let y = pca.transform(&rows[i * v..(i + 1) * v])?;
        println!("  {y:+.3?}  {doc}");
        reduced.push(y);
    }
    Ok(reduced)
}

fn main() -> Result<()> {
    run_example()?;
    Ok(())
}
