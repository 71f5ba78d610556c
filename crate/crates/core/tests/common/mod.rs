#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_hirecall");

pub fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// A manifest over a generated collection.
pub fn synthetic_manifest(dir: &Path, docs: usize, topics: usize, relevant: usize, session: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "[data]\noutput = \"out\"\n\n[synthetic]\nseed = 11\ndocs = {docs}\ntopics = {topics}\nrelevant_per_topic = {relevant}\n\n[session]\n{session}\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// A running `hirecall serve` child; killed (SIGKILL) on drop.
pub struct Server {
    pub child: Child,
    pub base: String,
}

impl Server {
    pub fn start(manifest: &Path, data_dir: &Path, envs: &[(&str, &str)]) -> Server {
        let mut cmd = Command::new(BIN);
        cmd.arg("serve")
            .arg(manifest)
            .env("BIND_ADDR", "127.0.0.1:0")
            .env("DATA_DIR", data_dir)
            .env_remove("AUTH_TOKEN")
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        for (k, v) in envs {
            cmd.env(k, v);
        }
        let mut child = cmd.spawn().expect("spawn hirecall serve");
        let stdout = child.stdout.take().unwrap();
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line {line:?}"))
            .to_string();
        let server = Server {
            child,
            base: format!("http://{addr}"),
        };
        server.wait_healthy(Duration::from_secs(120));
        server
    }

    fn wait_healthy(&self, timeout: Duration) {
        let start = Instant::now();
        while start.elapsed() < timeout {
            if let Ok((200, _)) = http(&self.base, "GET", "/healthz", None) {
                return;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        panic!("service did not become healthy");
    }

    pub fn call(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        http(&self.base, method, path, body).expect("request")
    }

    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn http(base: &str, method: &str, path: &str, body: Option<Value>) -> Result<(u16, Value), ureq::Error> {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let url = format!("{base}{path}");
    let mut resp = match (method, body) {
        ("GET", _) => agent.get(&url).call()?,
        ("DELETE", _) => agent.delete(&url).call()?,
        ("POST", Some(b)) => agent.post(&url).send_json(&b)?,
        (m, _) => panic!("unsupported {m}"),
    };
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string()?;
    let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
    Ok((status, value))
}
