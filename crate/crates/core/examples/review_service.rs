//! Runs the review service in-process and drives one session over HTTP,
//! answering from the qrels as a human reviewer would from the UI.

use std::path::Path;

use hirecall::manifest::RunManifest;
use hirecall::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};

const MANIFEST: &str = "[synthetic]\nseed = 2\ndocs = 2000\ntopics = 1\nrelevant_per_topic = 15\n";

fn review(base: &str, qrels: &hirecall::QrelsOracle) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let created: Value = agent
        .post(&format!("{base}/sessions"))
        .send_json(json!({"topic_id": "101", "overrides": {"stop_after": 40}}))?
        .body_mut()
        .read_json()?;
    let id = created["session_id"].as_str().unwrap().to_string();
    println!("session {id} on topic {}", created["topic_id"]);

    loop {
        let mut resp = agent.get(&format!("{base}/sessions/{id}/next")).call()?;
        if resp.status() == 204 {
            println!("exhausted: {:?}", resp.headers().get("x-session-state"));
            break;
        }
        let next: Value = resp.body_mut().read_json()?;
        let doc = next["doc_id"].as_str().unwrap();
        let relevant = qrels.judge("101", doc).is_relevant();
        agent
            .post(&format!("{base}/sessions/{id}/judgments"))
            .send_json(json!({"doc_id": doc, "judgment": if relevant { "relevant" } else { "nonrelevant" }}))?;
        if relevant {
            println!("  #{:<3} {doc} relevant (score {:.3})", next["iteration"], next["score"].as_f64().unwrap());
        }
    }

    let metrics: Value = agent.get(&format!("{base}/sessions/{id}/metrics")).call()?.body_mut().read_json()?;
    println!(
        "found {} of {} in {} reviews",
        metrics["relevant_found"], metrics["r_t"], metrics["shown"]
    );
    let export = agent.get(&format!("{base}/sessions/{id}/export")).call()?.body_mut().read_to_string()?;
    println!("export has {} lines", export.lines().count());
    agent.delete(&format!("{base}/sessions/{id}")).call()?;
    Ok(())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let data_dir = std::env::temp_dir().join(format!("hirecall-service-{}", std::process::id()));
    let manifest = RunManifest::parse(MANIFEST, Path::new("."), Path::new("inline.toml"))?;
    let data = manifest.load_data()?;
    let qrels = data.qrels.clone().expect("synthetic data has qrels");

    let state = AppState::new(manifest, ServiceConfig::new(&data_dir));
    state.install(data)?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(state)).await });

    tokio::task::spawn_blocking(move || review(&base, &qrels)).await??;
    std::fs::remove_dir_all(&data_dir)?;
    Ok(())
}
