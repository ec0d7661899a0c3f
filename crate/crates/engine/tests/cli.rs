use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bot_engine::EvalReport;

fn bot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bot"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn bot")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fixtures(dir: &Path) -> (String, String) {
    let data = dir.join("sms.jsonl");
    fs::write(
        &data,
        (1..=8)
            .map(|i| {
                let label = if i % 2 == 0 { "spam" } else { "ham" };
                format!(r#"{{"id": "m{i}", "text": "message number {i}", "label": "{label}"}}"#)
            })
            .collect::<Vec<_>>()
            .join("\n"),
    )
    .unwrap();
    let script = dir.join("script.json");
    fs::write(
        &script,
        r#"{"defaults": {"actor": [{"reply": "ANSWER: spam\nCONFIDENCE: 0.7"}], "reflector": [{"accept_all": {"confidence": 0.8}}]}}"#,
    )
    .unwrap();
    (data.display().to_string(), format!("scripted:{}", script.display()))
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let (data, backend) = fixtures(dir.path());
    let reflect = dir.path().join("reflect.json").display().to_string();
    let batched = dir.path().join("bot.json").display().to_string();
    let common = ["--dataset", &data, "--schema", "sms_spam", "--backend", &backend];

    let out = stdout(&bot(&[&["run"], &common[..], &["--method", "reflect", "--out", &reflect]].concat()));
    assert!(out.contains("on 8 items"), "{out}");
    let out = stdout(&bot(&[
        &["run"],
        &common[..],
        &["--method", "bot", "--batch-size", "4", "--out", &batched, "--baseline", &reflect],
    ]
    .concat()));
    assert!(out.contains("reflector"), "{out}");

    let report = EvalReport::load(Path::new(&batched)).unwrap();
    assert_eq!(report.aggregates.items, 8);
    assert_eq!(report.aggregates.accuracy, Some(0.5));
    assert!(report.comparison.is_some());

    let json = stdout(&bot(&["compare", "--baseline", &reflect, "--candidate", &batched, "--json"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let stages = v["stages"].as_array().unwrap();
    let reflector = stages.iter().find(|s| s["stage"] == "reflector").unwrap();
    assert!(reflector["delta_pct"].as_f64().unwrap() > 0.0);
}

#[test]
fn plan_prints_a_partition() {
    let dir = tempfile::tempdir().unwrap();
    let (data, backend) = fixtures(dir.path());
    let out = stdout(&bot(&[
        "plan", "--dataset", &data, "--schema", "sms_spam", "--batching", "sequential", "--batch-size", "3", "--backend",
        &backend,
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(out.contains("m8"), "{v}");
}

#[test]
fn theory_writes_csv() {
    let out = stdout(&bot(&["theory", "n-eff", "--n", "4,8", "--rho", "0,0.3"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,rho,n_eff");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("4,0.0,4"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = bot(&[
        "run", "--dataset", "/nonexistent.jsonl", "--schema", "choice_qa", "--backend", "scripted:/nonexistent.json", "--out",
        &dir.path().join("r.json").display().to_string(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
