use std::path::Path;
use std::process::{Command, Output};

fn carecall(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carecall"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .unwrap()
}

fn stdout_of(store: &Path, args: &[&str]) -> String {
    let out = carecall(store, args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn purge_on_a_fresh_store_removes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_of(dir.path(), &["purge", "--now", "2020-06-01T00:00:00"]);
    assert!(out.starts_with("purge_count 0"), "{out}");
}

#[test]
fn a_confirmed_case_settles_the_outbreak_question() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("confirmed_one.jsonl");
    std::fs::write(
        &obs,
        "{\"id\": \"n1\", \"features\": {\"smell_taste_loss\": 0}, \"confirmed\": true}\n\
         {\"id\": \"n2\", \"features\": {\"smell_taste_loss\": 0}, \"confirmed\": false}\n",
    )
    .unwrap();
    let out = stdout_of(dir.path(), &["spread", "estimate", "--obs", obs.to_str().unwrap()]);
    assert!(out.lines().any(|l| l == "p_T1 = 1.0"), "{out}");
    assert!(out.contains("z[n1] = 1.000000"), "{out}");
}

#[test]
fn oracle_flag_reports_matching_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.jsonl");
    std::fs::write(&obs, "{\"id\": \"a\", \"features\": {\"smell_taste_loss\": 1}}\n").unwrap();
    let out = stdout_of(
        dir.path(),
        &["spread", "estimate", "--obs", obs.to_str().unwrap(), "--oracle"],
    );
    let values: Vec<f64> = out
        .lines()
        .filter_map(|l| l.split("p_T1 = ").nth(1))
        .map(|rest| rest.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 3, "{out}");
    for v in &values[1..] {
        assert!((v - values[0]).abs() <= 1e-6 * values[0], "{out}");
    }
}

#[test]
fn contract_violations_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("bad.jsonl");
    std::fs::write(&obs, "{\"id\": \"a\", \"features\": {\"smell_taste_loss\": 2}}\n").unwrap();
    let out = carecall(dir.path(), &["spread", "estimate", "--obs", obs.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("must be 0 or 1"));

    // no campaign to report on yet
    let out = carecall(dir.path(), &["report"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[triage]\ntau = 1.5\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_carecall"))
        .args([
            "--store",
            dir.path().to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "purge",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn simulate_then_label_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let first = stdout_of(
        dir.path(),
        &["simulate", "--subjects", "40", "--days", "6", "--seed", "5"],
    );
    assert!(first.contains("hang-up rate"), "{first}");
    assert!(dir.path().join("campaign-0001").join("events.jsonl").exists());
    assert!(dir.path().join("campaign-0001").join("report.txt").exists());

    let batch = stdout_of(dir.path(), &["hitl", "batch", "--k", "3"]);
    let rows: Vec<serde_json::Value> = batch.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!rows.is_empty() && rows.len() <= 3);
    let labels: String = rows
        .iter()
        .map(|r| serde_json::json!({"text": r["text"], "label": "OTHER"}).to_string() + "\n")
        .collect();
    let file = dir.path().join("labels.jsonl");
    std::fs::write(&file, labels).unwrap();
    let out = stdout_of(
        dir.path(),
        &[
            "hitl",
            "label",
            "--file",
            file.to_str().unwrap(),
            "--now",
            "2020-03-20T09:00:00",
        ],
    );
    assert!(out.contains(&format!("applied {} labels", rows.len())), "{out}");

    // labelled texts leave the pool
    let again = stdout_of(dir.path(), &["hitl", "batch", "--k", "50"]);
    for r in &rows {
        assert!(!again.contains(&r["text"].to_string()), "{again}");
    }

    let report = stdout_of(
        dir.path(),
        &["report", "--from", "2020-03-09", "--to", "2020-03-14", "--json"],
    );
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(report["calls_total"].as_u64().unwrap() > 0);

    // a second simulation becomes the active campaign
    stdout_of(
        dir.path(),
        &["simulate", "--subjects", "10", "--days", "2", "--seed", "1"],
    );
    assert!(dir.path().join("campaign-0002").join("events.jsonl").exists());
}

#[test]
fn lexicon_build_from_examples() {
    let dir = tempfile::tempdir().unwrap();
    let examples = dir.path().join("examples.jsonl");
    std::fs::write(
        &examples,
        "{\"text\": \"yes\", \"label\": \"YES\"}\n{\"text\": \"nope\", \"label\": \"NO\"}\n{\"text\": \"hello\", \"label\": \"OTHER\"}\n",
    )
    .unwrap();
    let out_path = dir.path().join("lexicon.json");
    let out = stdout_of(
        dir.path(),
        &[
            "lexicon",
            "build",
            "--examples",
            examples.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ],
    );
    assert!(out.starts_with("3 examples, 3 tokens"), "{out}");
    let text = std::fs::read_to_string(out_path).unwrap();
    let lexicon = carecall_core::nlu::Lexicon::from_json(&text).unwrap();
    assert_eq!(lexicon.classify("nope").top1, carecall_core::nlu::IntentClass::No);
}
