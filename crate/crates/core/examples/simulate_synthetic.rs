//! Simulated review of a generated collection: the qrels play the reviewer
//! and each topic runs until the `4r+1000` budget is spent.

use std::sync::Arc;

use hirecall::engine::BudgetRule;
use hirecall::ingest::generate_synthetic;
use hirecall::{run_simulation, FeatureIndex, FeatureParams, MetricsReport, SessionConfig, StopAfter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let collection = generate_synthetic(7, 5_000, 3, 40)?;
    let index = Arc::new(FeatureIndex::build(Arc::new(collection.corpus), FeatureParams::default())?);
    let config = SessionConfig {
        stop_after: Some(StopAfter::Rule(BudgetRule::FourRPlus1000)),
        ..SessionConfig::default()
    };
    for topic in &collection.topics {
        let log = run_simulation(topic, index.clone(), None, &collection.qrels, &config)?;
        let r_t = collection.qrels.r_t(&topic.id);
        let report = MetricsReport::compute(&topic.id, &log, r_t, &[10, 100]);
        // First review position at which every relevant document was found.
        let total_recall_at = report.gain_curve.iter().find(|(_, r)| *r >= 1.0).map(|(i, _)| *i);
        println!(
            "topic {} ({:?}): shown={} found={}/{} P@10={:.2} recall@4r+1000={:.3} all found at {:?}",
            topic.id,
            topic.query,
            report.shown,
            report.relevant_found,
            r_t,
            report.p_at[&10],
            report.recall_at_4r_1000,
            total_recall_at
        );
    }
    Ok(())
}
