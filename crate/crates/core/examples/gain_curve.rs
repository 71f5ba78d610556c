//! Effort/recall accounting for one simulated topic: the gain curve, the
//! per-cutoff metrics and the run log round-trip.

use std::sync::Arc;

use hirecall::eval::{gain_curve, recall_at_4r_1000};
use hirecall::ingest::generate_synthetic;
use hirecall::{run_simulation, FeatureIndex, FeatureParams, MetricsReport, RunLog, SessionConfig, StopAfter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let collection = generate_synthetic(9, 2_000, 1, 20)?;
    let topic = &collection.topics[0];
    let index = Arc::new(FeatureIndex::build(Arc::new(collection.corpus.clone()), FeatureParams::default())?);
    let config = SessionConfig {
        stop_after: Some(StopAfter::Count(120)),
        ..SessionConfig::default()
    };
    let log = run_simulation(topic, index, None, &collection.qrels, &config)?;

    // The TSV form is what `hirecall eval` consumes.
    let tsv = log.to_tsv();
    let reread = RunLog::read(tsv.as_bytes(), "in-memory")?;
    assert_eq!(reread, log);
    println!("first log lines:\n{}", tsv.lines().take(3).collect::<Vec<_>>().join("\n"));

    let r_t = collection.qrels.r_t(&topic.id);
    let curve = gain_curve(&log, r_t);
    println!("\niteration  recall");
    for (i, r) in curve.iter().filter(|(i, _)| i % 10 == 0) {
        println!("{i:>9}  {r:.3}  {}", "#".repeat((r * 40.0).round() as usize));
    }
    let report = MetricsReport::compute(&topic.id, &log, r_t, &[10, 50, 100]);
    println!("\nrecall@4r+1000 = {:.3}", recall_at_4r_1000(&log, r_t));
    println!("{}", serde_json::to_string_pretty(&report.metrics())?);
    let mut csv = Vec::new();
    report.write_gain_csv(&mut csv)?;
    println!("gain.csv is {} lines", String::from_utf8(csv)?.lines().count());
    Ok(())
}
