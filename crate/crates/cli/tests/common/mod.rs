#![allow(dead_code)]

pub mod http;

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mock")
}

pub fn fixture_config() -> PathBuf {
    fixture_dir().join("config.toml")
}

/// The bundled config with input paths made absolute, edited by `edit`, and
/// written into `dir`.
pub fn config_in(dir: &Path, edit: impl FnOnce(String) -> String) -> PathBuf {
    let fx = fixture_dir();
    let text = std::fs::read_to_string(fixture_config()).unwrap();
    let text = text
        .replace(
            "corpus = \"stimuli.csv\"",
            &format!("corpus = {:?}", fx.join("stimuli.csv").display().to_string()),
        )
        .replace(
            "instructions = \"instructions.toml\"",
            &format!("instructions = {:?}", fx.join("instructions.toml").display().to_string()),
        )
        .replace(
            "path = \"responses_rt.csv\"",
            &format!("path = {:?}", fx.join("responses_rt.csv").display().to_string()),
        );
    let path = dir.join("config.toml");
    std::fs::write(&path, edit(text)).unwrap();
    path
}

/// Run the binary with a scrubbed environment: no API key, no proxies.
pub fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_norm-forge"));
    cmd.args(args).env_clear();
    if let Ok(p) = std::env::var("PATH") {
        cmd.env("PATH", p);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn stage(stage: &str, config: &Path, out: &Path) -> Output {
    run(
        &[stage, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    )
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Relative path → bytes of every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(d: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        if !d.exists() {
            return;
        }
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, base, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Accepts TCP connections on an ephemeral port and only counts them.
pub struct ConnectionCounter {
    pub url: String,
    count: Arc<AtomicUsize>,
}

impl ConnectionCounter {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let count = Arc::new(AtomicUsize::new(0));
        let c = count.clone();
        std::thread::spawn(move || {
            for s in listener.incoming() {
                c.fetch_add(1, Ordering::SeqCst);
                drop(s);
            }
        });
        Self { url, count }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

pub fn report_json(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report/report.json")).unwrap()).unwrap()
}
