//! Sparse-only versus early fusion (E3) and late fusion (E4) with dense
//! vectors. The vectors here are synthetic: relevant documents lean towards
//! the topic direction, so the dense block carries a weak but real signal.

use std::sync::Arc;

use hirecall::embeddings::DenseVector;
use hirecall::ingest::generate_synthetic;
use hirecall::{
    run_simulation, EmbeddingStore, FeatureIndex, FeatureParams, FusionStrategy, MetricsReport, SessionConfig,
    StopAfter,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 32;

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let collection = generate_synthetic(3, 3_000, 2, 30)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = EmbeddingStore::new(DIM);
    let directions: Vec<Vec<f32>> = (0..collection.topics.len())
        .map(|_| unit((0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    for doc in collection.corpus.docs() {
        let mut v: Vec<f32> = (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (t, topic) in collection.topics.iter().enumerate() {
            if collection.qrels.judge(&topic.id, &doc.id).is_relevant() {
                v.iter_mut().zip(&directions[t]).for_each(|(x, d)| *x += 1.5 * d);
            }
        }
        store.insert(&doc.id, &unit(v))?;
    }
    for (t, topic) in collection.topics.iter().enumerate() {
        store.insert_query(&topic.id, DenseVector::new(directions[t].clone()).unwrap())?;
    }

    let index = Arc::new(FeatureIndex::build(Arc::new(collection.corpus.clone()), FeatureParams::default())?);
    let store = Arc::new(store);
    for fusion in [FusionStrategy::E1, FusionStrategy::E2, FusionStrategy::E3, FusionStrategy::E4] {
        let config = SessionConfig {
            fusion,
            stop_after: Some(StopAfter::Count(150)),
            ..SessionConfig::default()
        };
        let mut line = format!("{fusion:?}:");
        for topic in &collection.topics {
            let log = run_simulation(topic, index.clone(), Some(store.clone()), &collection.qrels, &config)?;
            let report = MetricsReport::compute(&topic.id, &log, collection.qrels.r_t(&topic.id), &[50]);
            let found = report.relevant_found as f64 / report.r_t as f64;
            line += &format!(" topic {} R@50={:.2} R@150={found:.2}", topic.id, report.r_at[&50]);
        }
        println!("{line}");
    }
    Ok(())
}
