use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use trajkit::io;
use trajkit::{Message, Query, ToolCall, ToolSpec, Trajectory};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajkit"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "trajkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tool_names() -> Vec<String> {
    let topics = ["price", "revenue", "dividend", "ratio", "news", "filing", "holder", "estimate"];
    let kinds = ["get", "list", "search", "compare", "history"];
    topics
        .iter()
        .flat_map(|t| kinds.iter().map(move |k| format!("{k}_{t}")))
        .collect()
}

fn catalog() -> Vec<ToolSpec> {
    tool_names()
        .into_iter()
        .map(|n| {
            let words = n.replace('_', " ");
            ToolSpec::new(n, format!("Return the {words} for a ticker symbol"))
        })
        .collect()
}

fn trajectory(qid: &str, text: &str, model: &str, tools: &[&str], answer: &str) -> Trajectory {
    let mut messages = vec![Message::system("You are FinBot."), Message::user(text)];
    for (i, t) in tools.iter().enumerate() {
        let id = format!("c{i}");
        messages.push(Message::assistant_calls("", vec![ToolCall::new(id.clone(), *t, json!({"ticker": "AAPL"}))]));
        messages.push(Message::tool(id, format!("{{\"{t}\": {}}}", i + 1)));
    }
    messages.push(Message::assistant(answer));
    Trajectory::new(qid, model, messages)
}

struct Corpus {
    dir: tempfile::TempDir,
}

impl Corpus {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn corpus() -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let names = tool_names();
    let mut queries = Vec::new();
    let mut raw = Vec::new();
    let mut fixtures = Vec::new();
    for i in 0..12 {
        let qid = format!("q{i:02}");
        let text = if i % 3 == 0 {
            format!("What is the price of AAPL? Compute the growth rate over {i} years and compare it with the sector average.")
        } else {
            format!("Show the latest revenue for ticker {i}")
        };
        let mut q = Query::new(&qid, &text, if i % 2 == 0 { "equity" } else { "macro" });
        q.reference_answer = Some("42".into());
        queries.push(q);
        let a = &names[i % names.len()];
        let b = &names[(i * 7 + 3) % names.len()];
        let c = &names[(i * 11 + 5) % names.len()];
        let call_sets: [Vec<&str>; 3] = [vec![a.as_str()], vec![a.as_str(), b.as_str()], vec![a.as_str(), b.as_str(), c.as_str(), a.as_str()]];
        for (m, tools) in ["alpha", "beta", "gamma"].iter().zip(call_sets.iter()) {
            raw.push(serde_json::to_string(&trajectory(&qid, &text, m, tools, "The answer is 42.")).unwrap());
        }
        for t in [a, b, c] {
            fixtures.push(json!({"tool": t, "args": {"ticker": "AAPL"}, "response": format!("{{\"{t}\": 1}}")}));
        }
    }
    // One record that is not JSON and one with an empty assistant reply only.
    raw.push("{not json".into());
    raw.push(serde_json::to_string(&Trajectory::new("q00", "delta", vec![Message::user("hi"), Message::assistant("")])).unwrap());
    std::fs::write(dir.path().join("raw.jsonl"), raw.join("\n") + "\n").unwrap();
    io::write_jsonl(dir.path().join("queries.jsonl"), &queries).unwrap();
    io::write_jsonl(dir.path().join("fixtures.jsonl"), &fixtures).unwrap();
    std::fs::write(dir.path().join("catalog.json"), serde_json::to_string(&catalog()).unwrap()).unwrap();
    Corpus { dir }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    io::read_jsonl(path).unwrap()
}

#[test]
fn full_pipeline_runs_and_is_reproducible() {
    let c = corpus();
    let d = c.dir.path();

    run(d, &["clean", "--in", &c.s("raw.jsonl"), "--out", &c.s("clean.jsonl"), "--report", &c.s("report.json"), "--token-limit", "16384"]);
    let report = read_json(&c.path("report.json"));
    assert_eq!(report["input"], 38);
    assert_eq!(report["retained"], 36);
    assert_eq!(report["skipped_malformed"], 1);
    let manifest = read_json(&c.path("clean.jsonl.manifest.json"));
    assert_eq!(manifest["command"], "clean");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    run(d, &[
        "select-golden", "--queries", &c.s("queries.jsonl"), "--candidates", &c.s("clean.jsonl"),
        "--out", &c.s("golden.jsonl"), "--selections", &c.s("selections.jsonl"), "--judge", "stub", "--stub-reply", "2",
    ]);
    let golden = lines(&c.path("golden.jsonl"));
    assert_eq!(golden.len(), 12);
    assert!(golden.iter().all(|g| g["source_model"] == "beta"));

    run(d, &["score", "--candidates", &c.s("clean.jsonl"), "--golden", &c.s("golden.jsonl"), "--out", &c.s("scores.jsonl")]);
    let scores = lines(&c.path("scores.jsonl"));
    assert_eq!(scores.len(), 36);
    let beta = scores.iter().find(|r| r["source_model"] == "beta").unwrap();
    assert_eq!(beta["tool_call_f1"], 1.0);

    run(d, &[
        "judge", "--metrics", "all", "--candidates", &c.s("clean.jsonl"), "--golden", &c.s("golden.jsonl"),
        "--queries", &c.s("queries.jsonl"), "--reports", &c.s("scores.jsonl"), "--out", &c.s("judged.jsonl"),
        "--judge", "stub", "--stub-reply", "score: 4",
    ]);
    let judged = lines(&c.path("judged.jsonl"));
    assert!(judged.iter().all(|r| r["answer_quality"] == 4.0 && r["overall"].is_number()));

    run(d, &["difficulty", "--queries", &c.s("queries.jsonl"), "--trajectories", &c.s("clean.jsonl"), "--out", &c.s("difficulty.jsonl")]);
    run(d, &["tier", "--scores", &c.s("difficulty.jsonl"), "--out", &c.s("tiers.jsonl")]);
    assert_eq!(lines(&c.path("tiers.jsonl")).len(), 12);
    for out in ["sample_a.jsonl", "sample_b.jsonl"] {
        run(d, &["--seed", "9", "sample", "--tiers", &c.s("tiers.jsonl"), "--n", "6", "--success-frac", "0.55", "--out", &c.s(out)]);
    }
    assert_eq!(lines(&c.path("sample_a.jsonl")).len(), 6);
    assert_eq!(std::fs::read(c.path("sample_a.jsonl")).unwrap(), std::fs::read(c.path("sample_b.jsonl")).unwrap());

    for out in ["pools.jsonl", "pools_again.jsonl"] {
        run(d, &[
            "augment", "--examples", &c.s("golden.jsonl"), "--catalog", &c.s("catalog.json"), "--out", &c.s(out),
            "--pool-size", "10", "--similar-frac", "0.5", "--seed", "5", "--cache", &c.s("vectors.jsonl"),
        ]);
    }
    assert_eq!(std::fs::read(c.path("pools.jsonl")).unwrap(), std::fs::read(c.path("pools_again.jsonl")).unwrap());
    for pool in lines(&c.path("pools.jsonl")) {
        let tools = pool["tools"].as_array().unwrap();
        assert_eq!(tools.len(), 10);
        assert!(pool["called"].as_array().unwrap().iter().all(|t| tools.contains(t)));
    }

    run(d, &["--seed", "1", "split", "--in", &c.s("golden.jsonl"), "--frac-sft", "0.5", "--sft-out", &c.s("sft.jsonl"), "--pref-out", &c.s("pref.jsonl")]);
    assert_eq!(lines(&c.path("sft.jsonl")).len(), 6);

    let replay = format!("replay:{}", c.s("golden.jsonl"));
    run(d, &[
        "rollout", "--queries", &c.s("queries.jsonl"), "--pools", &c.s("pools.jsonl"), "--fixtures", &c.s("fixtures.jsonl"),
        "--catalog", &c.s("catalog.json"), "--max-turns", "7", "--top-p", "0.9", "--model", &replay, "--out", &c.s("rollouts.jsonl"),
    ]);
    let rollouts = lines(&c.path("rollouts.jsonl"));
    assert_eq!(rollouts.len(), 12);
    assert!(rollouts.iter().all(|t| t["failed"].is_null()));

    run(d, &[
        "--seed", "3", "pair", "--refs", &c.s("pref.jsonl"), "--rollouts", &c.s("rollouts.jsonl"), "--pools", &c.s("pools.jsonl"),
        "--catalog", &c.s("catalog.json"), "--out", &c.s("pairs.jsonl"), "--judge", "stub",
        "--stub-reply", r#"{"verdict": "same quality", "reasoning": "equal"}"#,
    ]);
    let pair_manifest = read_json(&c.path("pairs.jsonl.manifest.json"));
    assert_eq!(pair_manifest["summary"]["ties"], 6);
    assert_eq!(pair_manifest["summary"]["pairs"], 0);

    run(d, &["export", "--split", "sft", "--in", &c.s("sft.jsonl"), "--pools", &c.s("pools.jsonl"), "--out", &c.s("train_sft.jsonl")]);
    let meta = read_json(&c.path("train_sft.jsonl.meta.json"));
    assert_eq!(meta["records"], 6);
    assert_eq!(meta["training"]["lora_rank"], 32);
    run(d, &["export", "--split", "pref", "--in", &c.s("pairs.jsonl"), "--pools", &c.s("pools.jsonl"), "--out", &c.s("train_pref.jsonl")]);
    assert_eq!(read_json(&c.path("train_pref.jsonl.meta.json"))["records"], 0);

    let data = c.path("data");
    run(d, &[
        "import", "--data", &data.display().to_string(), "--queries", &c.s("queries.jsonl"),
        "--candidates", &c.s("clean.jsonl"), "--reports", &c.s("judged.jsonl"), "--selections", &c.s("selections.jsonl"),
    ]);
    assert!(data.join("annotations.jsonl").exists());
}

#[test]
fn dangling_pool_reference_is_a_structured_error() {
    let c = corpus();
    let d = c.dir.path();
    run(d, &["clean", "--in", &c.s("raw.jsonl"), "--out", &c.s("clean.jsonl"), "--report", &c.s("report.json")]);
    std::fs::write(c.path("pools.jsonl"), "").unwrap();
    let out = bin()
        .args(["export", "--split", "sft", "--in", &c.s("clean.jsonl"), "--pools", &c.s("pools.jsonl"), "--out", &c.s("x.jsonl")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"]["kind"], "dangling");
    assert!(err["error"]["message"].as_str().unwrap().contains("q00"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults() {
    let c = corpus();
    let d = c.dir.path();
    run(d, &["clean", "--in", &c.s("raw.jsonl"), "--out", &c.s("clean.jsonl"), "--report", &c.s("report.json")]);
    run(d, &[
        "select-golden", "--queries", &c.s("queries.jsonl"), "--candidates", &c.s("clean.jsonl"),
        "--out", &c.s("golden.jsonl"), "--judge", "stub", "--stub-reply", "1",
    ]);
    std::fs::write(c.path("cfg.toml"), "seed = 4\n[augment]\npool_size = 12\n").unwrap();
    run(d, &["--config", &c.s("cfg.toml"), "augment", "--examples", &c.s("golden.jsonl"), "--catalog", &c.s("catalog.json"), "--out", &c.s("p.jsonl")]);
    let out = bin()
        .args(["augment", "--examples", &c.s("clean.jsonl"), "--catalog", &c.s("catalog.json"), "--out", &c.s("dup.jsonl")])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let m = read_json(&c.path("p.jsonl.manifest.json"));
    assert_eq!(m["parameters"]["pool_size"], 12);
    assert_eq!(m["seed"], 4);
}
