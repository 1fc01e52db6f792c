//! Helpers shared by the CLI test targets: running the binary and a local
//! chat-completions server that answers from the lexicon backends.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use objhal::datagen::template_caption;
use objhal::extraction::{extract_lexicon, Caption, ObjectLexicon};
use objhal::llm_client::{parse_list_literal, render_list_literal, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
use objhal::matching::{match_coverage, match_hallucination, SynonymTable};

pub const API_KEY: &str = "sk-test-7f3a9c1e-do-not-log";

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// The binary with a clean LLM environment.
pub fn objhal() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_objhal"));
    cmd.env_remove(ENV_ENDPOINT).env_remove(ENV_API_KEY).env_remove(ENV_MODEL).env_remove("RUST_LOG");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    objhal().args(args).output().expect("binary runs")
}

/// Runs and asserts success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "objhal {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn stderr_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON record in {text}"));
    serde_json::from_str(line).expect("error record is JSON")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Every file under `dir` except run manifests, keyed by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "run_manifest.json" {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

/// Every byte under `dir`, manifests included.
pub fn all_bytes(dir: &Path) -> Vec<u8> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(all_bytes(&path));
        } else {
            out.extend(std::fs::read(&path).unwrap());
        }
    }
    out
}

pub fn contains(haystack: &[u8], needle: &str) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle.as_bytes())
}

/// Local server speaking the chat-completions wire format. Extraction and
/// matching prompts are answered by the lexicon backends, the contextual
/// prompt by the template captioner. Requests without the expected bearer
/// token get 401.
pub struct FakeLlm {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl FakeLlm {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let counter = counter.clone();
                std::thread::spawn(move || serve(stream, &counter));
            }
        });
        Self { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn command(&self) -> Command {
        let mut cmd = objhal();
        cmd.env(ENV_ENDPOINT, &self.url).env(ENV_API_KEY, API_KEY);
        cmd
    }
}

fn serve(stream: TcpStream, hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut length = 0usize;
    let mut authorized = false;
    let mut first = true;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if first {
            first = false;
            continue;
        }
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let (name, value) = (name.trim().to_ascii_lowercase(), value.trim());
            if name == "content-length" {
                length = value.parse().unwrap_or(0);
            } else if name == "authorization" {
                authorized = value == format!("Bearer {API_KEY}");
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    hits.fetch_add(1, Ordering::SeqCst);
    let (status, payload) = if authorized {
        let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
        let prompt = request["messages"][0]["content"].as_str().unwrap_or_default();
        match answer(prompt) {
            Some(text) => ("200 OK", serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] })),
            None => ("400 Bad Request", serde_json::json!({ "error": "unrecognized prompt" })),
        }
    } else {
        ("401 Unauthorized", serde_json::json!({ "error": "bad credentials" }))
    };
    let payload = payload.to_string();
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
}

fn last_value<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let prefix = format!("{name} = ");
    prompt.lines().rev().find_map(|l| l.strip_prefix(prefix.as_str()))
}

fn answer(prompt: &str) -> Option<String> {
    let table = SynonymTable::default();
    if prompt.starts_with("I have a description") {
        let quoted = last_value(prompt, "caption")?;
        let text = quoted.strip_prefix('"')?.strip_suffix('"')?.replace("\\n", "\n");
        let mentions = extract_lexicon(&Caption::new("q", "q", text), &ObjectLexicon::default_english());
        let names: Vec<String> = mentions.into_iter().filter(|m| !m.indicated).map(|m| m.canonical).collect();
        Some(render_list_literal(&names))
    } else if prompt.starts_with("I have two lists") {
        let gt = parse_list_literal(last_value(prompt, "list_A")?).ok()?;
        let mentions = parse_list_literal(last_value(prompt, "list_B")?).ok()?;
        Some(render_list_literal(&match_hallucination(&gt, &mentions, &table)))
    } else if prompt.starts_with("I have two list of") {
        let mentions = parse_list_literal(last_value(prompt, "list_A")?).ok()?;
        let gt = parse_list_literal(last_value(prompt, "list_B")?).ok()?;
        Some(render_list_literal(&match_coverage(&mentions, &gt, &table)))
    } else if prompt.starts_with("You are given") {
        let objects = parse_list_literal(last_value(prompt, "objects")?).ok()?;
        Some(template_caption("contextual", &objects, 0))
    } else {
        None
    }
}

/// Settings for [`pipeline`].
pub struct PipelineRun<'a> {
    pub images: usize,
    pub epochs: usize,
    pub samples: usize,
    pub epsilons: &'a [&'a str],
    /// Contextual generation, extraction and matching through the LLM backends.
    pub llm: bool,
    pub extra: &'a [&'a str],
}

/// Synthesizes a world, builds the corpus, trains both stages, generates at
/// every ε and evaluates each batch, all under `root`. With no ε the run
/// stops after the corpus is linted. `make` builds each command, so callers
/// pick the environment.
pub fn pipeline(root: &Path, cfg: &PipelineRun<'_>, make: &dyn Fn() -> Command) {
    let d = |name: &str| root.join(name);
    let step = |args: Vec<String>| {
        let mut cmd = make();
        cmd.args(cfg.extra).args(&args);
        let out = cmd.output().expect("binary runs");
        assert!(
            out.status.success(),
            "objhal {args:?} failed with {:?}\nstderr: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let v = |items: &[&str]| items.iter().map(|x| (*x).to_owned()).collect::<Vec<_>>();
    let images = cfg.images.to_string();
    let epochs = cfg.epochs.to_string();
    let samples = cfg.samples.to_string();
    let gt = s(d("synth").join("gt.json"));
    let splits = s(d("split").join("splits.json"));
    let corpus = s(d("corpus").join("corpus.jsonl"));

    step(v(&["synth", "--images", &images, "--out", &s(d("synth"))]));
    step(v(&["datagen", "split", "--ground-truth", &gt, "--detections", &s(d("synth").join("detections.json")), "--out", &s(d("split"))]));
    step(v(&[
        "datagen", "contextual", "--splits", &splits, "--generator", if cfg.llm { "llm" } else { "template" }, "--out", &s(d("ctx")),
    ]));
    step(v(&["datagen", "joint", "--captions", &s(d("synth").join("captions.jsonl")), "--splits", &splits, "--out", &s(d("joint"))]));
    step(v(&[
        "datagen", "merge", "--inputs", &s(d("ctx").join("contextual.jsonl")), &s(d("joint").join("joint.jsonl")),
        "--ratio", "all", "--out", &s(d("corpus")),
    ]));
    step(v(&["datagen", "lint", "--corpus", &corpus, "--splits", &splits, "--out", &s(d("lint"))]));
    if cfg.epsilons.is_empty() {
        return;
    }
    step(v(&["train-base", "--corpus", &corpus, "--epochs", &epochs, "--out", &s(d("base"))]));
    step(v(&[
        "train-control", "--model", &s(d("base").join("base.ckpt")), "--corpus", &corpus, "--epochs", &epochs,
        "--out", &s(d("control")),
    ]));
    let mut summaries = Vec::new();
    for eps in cfg.epsilons {
        let gen = d(&format!("gen{eps}"));
        let eval = d(&format!("eval{eps}"));
        step(v(&[
            "generate", "--model", &s(d("control").join("control.ckpt")), "--epsilon", eps, "--samples", &samples,
            "--ground-truth", &gt, "--out", &s(gen.clone()),
        ]));
        let mut args = v(&[
            "eval", "--captions", &s(gen.join("samples.jsonl")), "--ground-truth", &gt,
            "--lexicon-dir", &s(d("synth").join("lexicon")), "--mode", "all", "--epsilon", eps, "--out", &s(eval.clone()),
        ]);
        if cfg.llm {
            args.extend(v(&["--extractor", "llm", "--matcher", "llm"]));
        }
        step(args);
        summaries.push(s(eval.join("summary-standard.json")));
    }
    let mut args = v(&["report", "--out", &s(d("report")), "--summaries"]);
    args.extend(summaries);
    step(args);
}
