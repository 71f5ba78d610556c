//! Paired t-test over per-topic results, as `hirecall compare --table` runs
//! it: two systems' recall@4r+1000 per topic, on the percent scale.

use std::path::Path;

use hirecall::eval::PercentTable;
use hirecall::stats::{paired_t_test, StatsError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/recall_4r_1000_per_topic.tsv");
    let table = PercentTable::load(&path)?;
    println!("{} topics; column means:", table.rows.len());
    for (name, mean) in table.means() {
        println!("  {name:<12} {mean:.4}");
    }

    let (a, b) = (&table.columns[0], &table.columns[1]);
    let t = paired_t_test(&table.column(a).unwrap(), &table.column(b).unwrap())?;
    println!(
        "{a} - {b}: mean diff {:+.3}, t={:.3}, df={}, p={:.4} -> {}",
        t.mean_difference,
        t.t_statistic,
        t.degrees_of_freedom,
        t.p_value,
        if t.significant(0.05) { "significant at 0.05" } else { "not significant at 0.05" }
    );

    // A constant shift has no variance to test against.
    let shifted: Vec<f64> = table.column(a).unwrap().iter().map(|x| x + 1.0).collect();
    match paired_t_test(&shifted, &table.column(a).unwrap()) {
        Err(StatsError::ZeroVariance { mean_difference }) => {
            println!("constant shift {mean_difference:+.1}: zero variance, no test")
        }
        other => println!("unexpected: {other:?}"),
    }

    // Published tables mix fractions and percents; cells ≤ 1 are scaled.
    let mixed = PercentTable::read("topic\tx\n1\t0.95\n2\t88.5\n".as_bytes(), "inline")?;
    println!("mixed column read as {:?}", mixed.column("x").unwrap());
    Ok(())
}
