use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use serde_json::{json, Value};

fn eaml() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eaml"))
}

fn run(args: &[&str]) -> Output {
    eaml().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

/// Ten numeric features, the miscoded and the missing one among them.
fn ten_feature_spec() -> Value {
    let names = ["age", "gcs", "pf_ratio", "heart_rate", "sys_bp", "temperature", "bun", "wbc", "potassium", "sodium"];
    let betas = [0.6, -0.8, -0.5, 0.3, -0.4, -0.1, 0.5, 0.2, 0.1, -0.1];
    json!({
        "n_train": 2000,
        "n_test": 1000,
        "seed": 5,
        "categorical": null,
        "numeric": names.iter().zip(betas).map(|(n, b)| json!({ "name": n, "beta": b })).collect::<Vec<_>>(),
    })
}

fn manifest(seed: u64) -> Value {
    json!({
        "out_dir": "out",
        "synthetic": { "n_train": 2000, "n_test": 800, "seed": seed },
        "rulefit": { "gbm": { "n_trees": 100 }, "seed": seed },
        "grid": { "mode": "soft", "lambdas": [0.001, 0.01], "gammas": [0.0, 1.0, 5.0] },
        "learning_curve": { "sizes": [200, 400, 800], "subsamples": 3 },
    })
}

fn run_manifest(dir: &Path, m: &Value) {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(m).unwrap()).unwrap();
    ok(&["run", "--manifest", p(&path)]);
}

/// One full pipeline run shared by the tests reading its artifacts.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        run_manifest(&dir, &manifest(1));
        dir.join("out")
    })
}

#[test]
fn rulefit_on_2000_by_10_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, ten_feature_spec().to_string()).unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--spec", p(&spec), "--out", p(&data)]);

    let fit = |tag: &str| {
        let model = dir.path().join(format!("model_{tag}.json"));
        let rules = dir.path().join(format!("rules_{tag}.jsonl"));
        let start = std::time::Instant::now();
        let stdout = ok(&[
            "rulefit-fit",
            "--data",
            p(&data.join("train.csv")),
            "--schema",
            p(&data.join("schema.json")),
            "--outcome",
            "outcome",
            "--out-model",
            p(&model),
            "--out-rules",
            p(&rules),
            "--seed",
            "0",
            "--test",
            p(&data.join("test_same.csv")),
        ]);
        assert!(start.elapsed().as_secs_f64() < 30.0);
        (std::fs::read(model).unwrap(), std::fs::read(rules).unwrap(), stdout)
    };
    let (model_a, rules_a, stdout) = fit("a");
    let (model_b, rules_b, _) = fit("b");
    assert_eq!(model_a, model_b);
    assert_eq!(rules_a, rules_b);

    let model: Value = serde_json::from_slice(&model_a).unwrap();
    assert_eq!(model["version"], 1);
    let n_rules = model["rules"].as_array().unwrap().len();
    assert!((50..=600).contains(&n_rules), "{n_rules} rules");
    assert_eq!(rules_a.iter().filter(|&&b| b == b'\n').count(), n_rules);
    for key in ["lambda", "rules", "train_auc", "test_auc", "train_balanced_accuracy", "test_balanced_accuracy"] {
        assert!(stdout.lines().any(|l| l.starts_with(&format!("{key}\t"))), "{key} missing from\n{stdout}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&[
        "rulefit-fit",
        "--data",
        "nope.csv",
        "--schema",
        p(&dir.path().join("absent.json")),
        "--out-model",
        "m.json",
        "--out-rules",
        "r.jsonl",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("schema"));

    assert_eq!(run(&["rulefit-fit", "--data", "x.csv"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));

    let out = pipeline();
    let soft_without_gamma = run(&[
        "eaml-fit",
        "--model",
        p(&out.join("model.json")),
        "--data",
        p(&out.join("data/train.csv")),
        "--deltas",
        p(&out.join("delta/deltas.json")),
        "--mode",
        "soft",
        "--lambda",
        "0.01",
        "--out",
        p(&dir.path().join("e.json")),
    ]);
    assert_eq!(soft_without_gamma.status.code(), Some(2));
    let bad_spec = run(&[
        "synth",
        "--out",
        p(&dir.path().join("s")),
        "--spec",
        p(&write(dir.path(), "bad.json", &bad_spec_json())),
    ]);
    assert_eq!(bad_spec.status.code(), Some(2), "{}", String::from_utf8_lossy(&bad_spec.stderr));
}

/// Default generator spec with an impossible hidden-group prevalence.
fn bad_spec_json() -> Value {
    let mut spec = eaml::synthetic::SyntheticSpec::default();
    spec.confounder.prevalence = 2.0;
    serde_json::to_value(spec).unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn delta_stage_outputs() {
    let out = pipeline();
    let hist = lines(&out.join("delta/delta_histogram.tsv"));
    assert_eq!(hist.len(), 6);
    let counts: Vec<usize> = hist[1..].iter().map(|l| l.rsplit('\t').next().unwrap().parse().unwrap()).collect();
    let total: usize = counts.iter().sum();
    assert_eq!(total + 1, lines(&out.join("delta/delta_report.tsv")).len());
    assert!((counts[0] + counts[1]) as f64 >= 0.8 * total as f64, "{counts:?}");

    // about 5% per tail
    let outliers = lines(&out.join("delta/outliers.tsv"));
    for tail in ["overrated", "underrated"] {
        let n = outliers.iter().filter(|l| l.starts_with(tail)).count() as f64;
        assert!(n >= 1.0 && n <= 0.05 * total as f64 + 3.0, "{tail}: {n} of {total}");
    }
    assert_eq!(lines(&out.join("delta/calibration.tsv")).len(), 6);
}

#[test]
fn delta_rejects_empty_and_foreign_assessments() {
    let out = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let base = |assessments: &Path| {
        run(&[
            "delta",
            "--rules",
            p(&out.join("rules.jsonl")),
            "--assessments",
            p(assessments),
            "--data",
            p(&out.join("data/train.csv")),
            "--schema",
            p(&out.join("data/schema.json")),
            "--out",
            p(&dir.path().join("d")),
        ])
    };
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(base(&empty).status.code(), Some(3));

    let foreign = dir.path().join("foreign.jsonl");
    let record = json!({ "expert_id": "e", "rule_id": "ffffffffffffffff", "rating": 3, "elapsed_ms": 1, "timestamp": "2020-01-01T00:00:00Z" });
    std::fs::write(&foreign, format!("{record}\n")).unwrap();
    let res = base(&foreign);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("mismatch"));
}

#[test]
fn grid_eval_and_curve_row_counts() {
    let out = pipeline();
    assert_eq!(lines(&out.join("scores.tsv")).len(), 2 * 3 + 1);
    // 2 models x 3 sets x 3 metrics
    assert_eq!(lines(&out.join("eval.tsv")).len(), 2 * 3 * 3 + 1);
    // 3 sizes x 2 subsets x 3 test sets
    assert_eq!(lines(&out.join("learning_curve.tsv")).len(), 3 * 2 * 3 + 1);

    let stdout = ok(&[
        "eval",
        "--model",
        p(&out.join("model.json")),
        "--data",
        &format!("a={}", p(&out.join("data/test_same.csv"))),
        "--data",
        &format!("b={}", p(&out.join("data/test_temporal.csv"))),
    ]);
    let auc_rows: Vec<&str> = stdout.lines().filter(|l| l.contains("\tauc\t")).collect();
    assert_eq!(auc_rows.len(), 2);
    assert!(auc_rows[0].starts_with("model\ta\t"));

    let dir = tempfile::tempdir().unwrap();
    let (model, train, deltas) = (out.join("model.json"), out.join("data/train.csv"), out.join("delta/deltas.json"));
    let common = ["--model", p(&model), "--data", p(&train), "--deltas", p(&deltas)];
    let hard = dir.path().join("hard.json");
    let mut args = vec!["eaml-fit"];
    args.extend(common);
    args.extend(["--mode", "hard", "--max-bin", "4", "--lambda", "0.005", "--out", p(&hard)]);
    ok(&args);
    let fitted: Value = serde_json::from_str(&std::fs::read_to_string(&hard).unwrap()).unwrap();
    let base: Value = serde_json::from_str(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    // every bin is at most 4, so no rule is dropped
    assert_eq!(fitted["rules"], base["rules"]);
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let other = tempfile::tempdir().unwrap();
    run_manifest(other.path(), &manifest(1));
    let first = pipeline();
    let second = other.path().join("out");
    let mut files = Vec::new();
    collect(first, first, &mut files);
    assert!(files.len() >= 20, "{files:?}");
    for rel in files {
        assert_eq!(std::fs::read(first.join(&rel)).unwrap(), std::fs::read(second.join(&rel)).unwrap(), "{}", rel.display());
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            collect(root, &path, out);
        } else {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn serve_and_fifteen_bots() {
    let out = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let rules = out.join("rules.jsonl");
    let k = lines(&rules).len();
    let mut child = eaml()
        .args(["serve", "--rules", p(&rules), "--store", p(&dir.path().join("store.jsonl")), "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut banner).unwrap();
    let base = banner.split_whitespace().last().unwrap().to_string();
    assert!(base.starts_with("http://"), "{banner}");

    let client = reqwest::Client::new();
    let mut bots = Vec::new();
    for e in 0..15u64 {
        let (client, base) = (client.clone(), base.clone());
        bots.push(tokio::spawn(async move {
            let s: Value = client
                .post(format!("{base}/sessions"))
                .json(&json!({ "expert_id": format!("bot{e}"), "seed": e }))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            let id = s["session_id"].as_str().unwrap().to_string();
            loop {
                let next: Value = client.get(format!("{base}/sessions/{id}/next")).send().await.unwrap().json().await.unwrap();
                if next["status"] == "done" {
                    break;
                }
                let body = json!({ "rule_id": next["rule_id"], "rating": 1 + (e % 5), "elapsed_ms": 10 });
                let r = client.post(format!("{base}/sessions/{id}/assessments")).json(&body).send().await.unwrap();
                assert!(r.status().is_success());
            }
        }));
    }
    for b in bots {
        b.await.unwrap();
    }
    let export: Vec<Value> = client.get(format!("{base}/export")).send().await.unwrap().json().await.unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(export.len(), 15 * k);
}
