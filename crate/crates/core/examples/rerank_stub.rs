//! Second-stage reranking of the classifier's top-k with a programmatic
//! scorer. The stub scores by how many query terms the rendered input
//! contains; a real deployment points an `http` endpoint at a cross-encoder.

use std::sync::Arc;

use hirecall::engine::{simulate, Session};
use hirecall::ingest::{generate_synthetic, tokenize};
use hirecall::rerank::{RerankError, RerankPolicy, RerankRequest, RerankResponse, ScorerEndpoint};
use hirecall::{FeatureIndex, FeatureParams, MetricsReport, SessionConfig, StopAfter};

fn overlap_scorer(request: &RerankRequest) -> Result<RerankResponse, RerankError> {
    let query = tokenize(&request.query);
    Ok(RerankResponse::from_pairs(request.candidates.iter().map(|c| {
        let input = tokenize(&c.input);
        let hits = input.iter().filter(|t| query.contains(t)).count();
        (c.doc_id.as_str(), hits as f64)
    })))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let collection = generate_synthetic(21, 4_000, 1, 25)?;
    let topic = &collection.topics[0];
    let index = Arc::new(FeatureIndex::build(Arc::new(collection.corpus.clone()), FeatureParams::default())?);
    println!(
        "monoBERT input: {:?}",
        hirecall::rerank::build_monobert_input(&topic.query, &collection.corpus.doc(0).text)
            .chars()
            .take(80)
            .collect::<String>()
    );

    for (label, rerank) in [
        ("first stage only", None),
        ("rerank k=20", Some(RerankPolicy::new(20, ScorerEndpoint::Injected))),
        (
            "rerank k=20, sum fusion",
            Some(RerankPolicy {
                fuse_sum: true,
                ..RerankPolicy::new(20, ScorerEndpoint::Injected)
            }),
        ),
    ] {
        let config = SessionConfig {
            rerank,
            stop_after: Some(StopAfter::Count(100)),
            ..SessionConfig::default()
        };
        let session = Session::with_scorer(topic.clone(), index.clone(), None, config, Arc::new(overlap_scorer))?;
        let log = simulate(session, &collection.qrels)?;
        let report = MetricsReport::compute(&topic.id, &log, collection.qrels.r_t(&topic.id), &[10, 50]);
        let first = &log.entries()[0];
        println!(
            "{label:>24}: P@10={:.2} R@50={:.2} first pick {} (first stage {:.3}, final {:.3})",
            report.p_at[&10], report.r_at[&50], first.doc_id, first.first_stage_score, first.final_score
        );
    }
    Ok(())
}
