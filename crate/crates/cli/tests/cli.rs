use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn atrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atrisk")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = atrisk(args);
    assert!(out.status.success(), "atrisk {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

struct Sim {
    dir: tempfile::TempDir,
}

impl Sim {
    fn new(students: &str) -> Sim {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sim").display().to_string();
        ok(&["simulate", "--seed", "7", "--students", students, "--out-dir", &out]);
        Sim { dir }
    }

    fn path(&self, rel: &str) -> String {
        self.dir.path().join(rel).display().to_string()
    }

    fn input(&self) -> [String; 4] {
        [
            "--events".into(),
            self.path("sim/events.jsonl"),
            "--schema".into(),
            self.path("sim/schema.json"),
        ]
    }

    fn run(&self, head: &[&str], tail: &[&str]) -> Output {
        let input = self.input();
        let mut args: Vec<&str> = head.to_vec();
        args.extend(input.iter().map(String::as_str));
        args.extend_from_slice(tail);
        atrisk(&args)
    }
}

#[test]
fn simulate_train_evaluate() {
    let sim = Sim::new("200");
    for f in ["events.jsonl", "schema.json", "truth.jsonl", "manifest.json"] {
        assert!(Path::new(&sim.path(&format!("sim/{f}"))).exists(), "{f}");
    }
    let m = json(sim.path("sim/manifest.json"));
    let rate = m["summary"]["cohort"]["dropout_rate"].as_f64().unwrap();
    assert!((rate - 0.1616).abs() <= 0.03, "{rate}");

    let out = sim.run(&["train", "--lookback", "7", "--weighting", "convex"], &["--out-dir", &sim.path("tr")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(sim.path("tr/manifest.json"));
    assert!(m["summary"]["training"]["pseudo_positive"].as_u64().unwrap() > 0);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"].as_str() == Some(sim.path("tr/model.json").as_str())));

    let out = sim.run(
        &["evaluate", "--model", &sim.path("tr/model.json"), "--split", &sim.path("tr/manifest.json")],
        &["--deltas", "1..14", "--out-dir", &sim.path("ev")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(sim.path("ev/report.json"));
    assert_eq!(report["horizons"].as_array().unwrap().len(), 14);
    let csv = std::fs::read_to_string(sim.path("ev/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 15);
    assert!(csv.starts_with("delta,auc,queries,positives\n"));
}

#[test]
fn no_lookback_trains_without_pseudo_pairs() {
    let sim = Sim::new("120");
    ok(&[
        &["train", "--lookback", "none"][..],
        &sim.input().iter().map(String::as_str).collect::<Vec<_>>(),
        &["--out-dir", &sim.path("tr")],
    ]
    .concat());
    let m = json(sim.path("tr/manifest.json"));
    assert_eq!(m["summary"]["training"]["pseudo_positive"].as_u64().unwrap(), 0);
}

#[test]
fn predict_flags_the_top_fraction() {
    let sim = Sim::new("120");
    sim.run(&["train"], &["--out-dir", &sim.path("tr")]);
    let out = sim.run(
        &["predict", "--model", &sim.path("tr/model.json")],
        &["--day", "40", "--top-fraction", "0.3", "--out-dir", &sim.path("pr")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(sim.path("pr/predictions.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let n = rows.len();
    assert!(n > 0);
    let flagged = rows.iter().filter(|r| r[4] == "1").count();
    assert_eq!(flagged, (0.3 * n as f64 - 1e-9).ceil() as usize);
    let probs: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    assert!(rows[..flagged].iter().all(|r| r[4] == "1"));
}

#[test]
fn featurize_dumps_pairs() {
    let sim = Sim::new("60");
    let out = sim.run(&["featurize", "--lookback", "3"], &["--out-dir", &sim.path("fz")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pairs = std::fs::read_to_string(sim.path("fz/pairs.csv")).unwrap();
    let feats = std::fs::read_to_string(sim.path("fz/features.csv")).unwrap();
    assert!(pairs.starts_with("student_id,day,label,weight,provenance\n"));
    assert_eq!(pairs.lines().count(), feats.lines().count());
    assert!(pairs.contains("pseudo_positive"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let sim = Sim::new("120");
    let out = sim.run(
        &["sweep", "--lookback", "none,7", "--weighting", "convex,concave", "--features", "time"],
        &["--deltas", "1,7", "--seeds", "1", "--out-dir", &sim.path("sw")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(sim.path("sw/report.csv")).unwrap();
    // arms: none, 7/convex, 7/concave; two horizons each
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn exit_codes() {
    let sim = Sim::new("60");
    let dir = sim.path("x");

    assert_eq!(code(&atrisk(&[])), 2);
    assert_eq!(code(&atrisk(&["train", "--out-dir", &dir])), 2);
    assert_eq!(code(&sim.run(&["train", "--lookback", "seven"], &["--out-dir", &dir])), 2);
    assert_eq!(code(&sim.run(&["train", "--weighting", "cubic"], &["--out-dir", &dir])), 2);
    assert_eq!(code(&sim.run(&["train", "--workers", "0"], &["--out-dir", &dir])), 2);
    assert_eq!(code(&sim.run(&["evaluate", "--model", "m.json"], &["--deltas", "0..3", "--out-dir", &dir])), 2);
    assert_eq!(code(&atrisk(&["--help"])), 0);

    let out = atrisk(&["train", "--events", "missing.jsonl", "--schema", &sim.path("sim/schema.json"), "--out-dir", &dir]);
    assert_eq!(code(&out), 3);
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], 3);
    assert_eq!(err["error"]["kind"], "data");

    let bad = sim.path("bad.jsonl");
    std::fs::write(&bad, "{\"student\":\"a\",\"day\":3,\"kind\":\"dropout_event\"}\n{\"student\":\"a\",\"day\":5,\"kind\":\"reschedule\"}\n").unwrap();
    let out = atrisk(&["train", "--events", &bad, "--schema", &sim.path("sim/schema.json"), "--out-dir", &dir]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("\\\"a\\\"") || String::from_utf8_lossy(&out.stderr).contains(" a"));

    let out = sim.run(&["evaluate", "--model", &sim.path("sim/schema.json")], &["--out-dir", &dir]);
    assert_eq!(code(&out), 4);
    assert!(!Path::new(&dir).exists(), "failed runs must not leave outputs");
}

#[test]
fn schema_mismatch_is_a_data_error() {
    let sim = Sim::new("60");
    sim.run(&["train", "--features", "in+time"], &["--out-dir", &sim.path("tr")]);
    let narrow = sim.path("narrow.json");
    std::fs::write(
        &narrow,
        r#"{"inclass_columns":["attention"],"outclass_columns":["satisfaction","responsiveness","price_sensitivity"]}"#,
    )
    .unwrap();
    let events = std::fs::read_to_string(sim.path("sim/events.jsonl")).unwrap();
    let narrowed: String = events
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if let Some(x) = v.get_mut("inclass") {
                *x = serde_json::json!([x[0]]);
            }
            v.to_string() + "\n"
        })
        .collect();
    let ev = sim.path("narrow.jsonl");
    std::fs::write(&ev, narrowed).unwrap();
    let out = atrisk(&[
        "predict",
        "--model",
        &sim.path("tr/model.json"),
        "--events",
        &ev,
        "--schema",
        &narrow,
        "--day",
        "30",
        "--out-dir",
        &sim.path("pr"),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!Path::new(&sim.path("pr")).exists());
}

#[test]
fn reruns_are_byte_identical() {
    let sim = Sim::new("100");
    let again: PathBuf = sim.dir.path().join("sim2");
    ok(&["simulate", "--seed", "7", "--students", "100", "--out-dir", &again.display().to_string()]);
    for f in ["events.jsonl", "truth.jsonl", "schema.json"] {
        assert_eq!(std::fs::read(sim.path(&format!("sim/{f}"))).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
    for d in ["a", "b"] {
        sim.run(&["train", "--seed", "3", "--workers", "1"], &["--out-dir", &sim.path(d)]);
    }
    assert_eq!(std::fs::read(sim.path("a/model.json")).unwrap(), std::fs::read(sim.path("b/model.json")).unwrap());
    let m = json(sim.path("a/manifest.json"));
    assert_eq!(m["seed"], 3);
    assert!(m["inputs"].as_array().unwrap().iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
}
