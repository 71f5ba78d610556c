//! Tokenization and the three sparse weightings on a toy corpus.

use std::sync::Arc;

use hirecall::features::FeatureSpace;
use hirecall::ingest::tokenize;
use hirecall::{Corpus, Document, FeatureIndex, FeatureParams, Weighting};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Arc::new(Corpus::from_documents(vec![
        Document::new("d1", "Tax fraud: offshore accounts hid the fraud."),
        Document::new("d2", "Quarterly tax filing reminders for small businesses"),
        Document::new("d3", "A recipe for sourdough bread"),
    ])?);
    println!("tokens(d1) = {:?}", tokenize(&corpus.doc(0).text));
    println!("vocab={} avg_doc_len={:.2}", corpus.vocab_size(), corpus.avg_doc_len());

    for weighting in [Weighting::TfidfLog, Weighting::Bm25, Weighting::TfidfBm25] {
        let params = FeatureParams {
            weighting,
            ..FeatureParams::default()
        };
        let index = FeatureIndex::build(corpus.clone(), params)?;
        let space: &FeatureSpace = index.space();
        let query = space.featurize_query(&corpus, "tax fraud");
        println!("\n{weighting:?} (dim {})", space.sparse_dim());
        for (i, doc) in corpus.docs().iter().enumerate() {
            let v = index.vector(i);
            let top: Vec<String> = v
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(t, w)| format!("{}={w:.3}", corpus.term(t % corpus.vocab_size() as u32)))
                .take(4)
                .collect();
            println!("  {} nnz={} cos(query)={:.3} [{}]", doc.id, v.len(), v.dot(&query), top.join(" "));
        }
    }
    Ok(())
}
