//! Scores a small hand-built embedding corpus: similarity categories,
//! separation, threshold selection and true/false rates.
//!
//! cargo run --example evaluate_embeddings

use saved::autograd::Tensor;
use saved::eval::{cosine_matrix, evaluate, select_threshold, EmbeddingCorpus, GroundTruth, PairScope};

fn main() -> saved::Result<()> {
    let rows = vec![
        vec![1.0, 0.1, 0.0],
        vec![0.9, 0.2, 0.1],
        vec![0.95, 0.0, 0.2],
        vec![0.0, 1.0, 0.1],
        vec![0.1, 0.9, 0.0],
        vec![0.3, 0.3, 1.0],
    ];
    let ids = ["a1", "a2", "a3", "b1", "b2", "c1"].map(String::from).to_vec();
    let families = ["a", "a", "a", "b", "b", "c"].map(String::from).to_vec();
    let corpus = EmbeddingCorpus::new(ids, families, Tensor::from_rows(&rows)?)?;

    let mut truth = GroundTruth::new();
    for (x, y) in [("a1", "a2"), ("a1", "a3"), ("a2", "a3"), ("b1", "b2")] {
        truth.insert(x, y);
    }
    let theta = cosine_matrix(&corpus)?;
    let xi = select_threshold(&theta, &truth, &corpus)?;
    let report = evaluate(&corpus, &truth, xi, &PairScope::all())?;
    print!("{}", report.to_csv());
    Ok(())
}
