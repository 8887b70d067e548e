use std::path::Path;
use std::process::{Command, Output};

fn robstop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robstop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ONE_STEP: &str = r#"{
  "name": "one-step",
  "nodes": [
    {"id": 0, "payoff": 1.0, "children": [1, 2], "probs": [0.25, 0.75]},
    {"id": 1, "payoff": 4.0},
    {"id": 2, "payoff": 0.0}
  ]
}"#;

#[test]
fn builtin_oracle_passes() {
    let o = robstop(&["oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn corrupted_fixture_names_the_node_and_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, ONE_STEP.replace("[0.25, 0.75]", "[0.25, 0.70]")).unwrap();
    let o = robstop(&["oracle", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("node 0"), "{}", stderr(&o));
}

#[test]
fn user_fixture_file_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.json");
    std::fs::write(&path, ONE_STEP).unwrap();
    let out = dir.path().join("report.json");
    let o = robstop(&["oracle", path.to_str().unwrap(), "--format", "json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.to_string().contains("dp-enumeration"));
}

#[test]
fn tree_beyond_the_cap_skips_enumeration_only() {
    let o = robstop(&["oracle", "trinomial-5", "--risk", "avar:0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("SKIP"), "{text}");
    assert!(text.contains("pathwise-dual"));
}

#[test]
fn bad_risk_and_unknown_flag_are_validation_errors() {
    assert_eq!(robstop(&["price", "--risk", "avar:1.5"]).status.code(), Some(1));
    assert_eq!(robstop(&["price", "--bogus"]).status.code(), Some(1));
    assert_eq!(robstop(&["price", "--risk", "avar:0.5", "--risk", "neutral"]).status.code(), Some(1));
}

#[test]
fn invalid_config_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, "n_inner = 0\n").unwrap();
    let o = robstop(&["table", "--config", path.to_str().unwrap(), "--risk", "neutral"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_inner"));
}

fn price_csv(out: &Path) -> String {
    let o = robstop(&[
        "price",
        "--risk",
        "avar:0.5",
        "--paths",
        "1000",
        "--inner",
        "20",
        "--seed",
        "3",
        "--no-timing",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = price_csv(&dir.path().join("a.csv"));
    let b = price_csv(&dir.path().join("b.csv"));
    assert_eq!(a, b);
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some("risk,label,lower,lower_sd,upper,upper_sd,x_star,seconds"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 8);
    assert_eq!(row[7].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn table_prints_one_row_per_risk() {
    let o = robstop(&[
        "table", "--risk", "avar:0.5", "--risk", "neutral", "--paths", "800", "--lower-only", "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
}

#[test]
fn policy_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    let base = ["price", "--risk", "avar:0.5", "--paths", "1000", "--lower-only", "--no-timing"];
    let mut fit = base.to_vec();
    fit.extend(["--policy-out", policy.to_str().unwrap()]);
    let first = robstop(&fit);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let mut reuse = base.to_vec();
    reuse.extend(["--policy-in", policy.to_str().unwrap()]);
    let second = robstop(&reuse);
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn simulate_writes_one_row_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("paths.csv");
    let o = robstop(&["simulate", "--paths", "25", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,dates,assets"));
    assert_eq!(lines.next(), Some("25,10,2"));
    assert_eq!(lines.count(), 25);
}
