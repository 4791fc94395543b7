use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn radonlab(args: &[&str], dir: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_radonlab"));
    cmd.args(args).current_dir(dir).env_remove("RADONLAB_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run_config(dir: &Path, name: &str, config: &str, extra: &[&str], env: &[(&str, &str)]) -> (Output, String, Value) {
    std::fs::write(dir.join(format!("{name}.json")), config).unwrap();
    let file = format!("{name}.json");
    let mut args = vec!["run", file.as_str()];
    args.extend_from_slice(extra);
    let out = radonlab(&args, dir, env);
    let csv = std::fs::read_to_string(dir.join(format!("{name}.csv"))).unwrap_or_default();
    let summary = std::fs::read_to_string(dir.join(format!("{name}.summary.json")))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or(Value::Null);
    (out, csv, summary)
}

#[test]
fn weyl_decay_t3_table_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, summary) =
        run_config(dir.path(), "weyl", r#"{"kind": "weyl-decay", "map": "t3", "q_cap": 500, "seed": 7}"#, &[], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["q", "value", "argmax", "fitted_model", "regime", "params_hash"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 500);
    let hash = summary["params_hash"].as_str().unwrap();
    assert!(rows.iter().all(|r| &r[4] == "exploratory" && &r[5] == hash));
    assert_eq!(&rows[0][0], "1");
    assert_eq!(&rows[499][0], "500");
    assert!(summary["result"]["slope"].as_f64().unwrap() <= -0.283);
    let ts = &summary["result"]["theil_sen"];
    assert!(ts["ci_low"].as_f64().unwrap() <= ts["slope"].as_f64().unwrap());
    assert!(ts["slope"].as_f64().unwrap() <= ts["ci_high"].as_f64().unwrap());
    assert_eq!(summary["version"], format!("v{}", env!("CARGO_PKG_VERSION")));
    assert_eq!(summary["params"]["q_cap"], 500);
    assert!(summary["params"].get("output").is_none());
}

#[test]
fn region_command_for_t3() {
    let dir = tempfile::tempdir().unwrap();
    let out = radonlab(&["region", "--map", "t3", "--eps-prime", "0.06", "--r", "2", "--s", "2"], dir.path(), &[]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["in_Omega_m"], true);
    assert_eq!(v["major_condition_ok"], true);
    assert_eq!(v["N_P"], 12);
    assert_eq!(v["boundary"], "201/400");
}

#[test]
fn region_kind_matches_command() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, summary) =
        run_config(dir.path(), "region", r#"{"kind": "region", "map": "t3", "eps_prime": 0.06, "r": 2, "s": "2"}"#, &[], &[]);
    assert!(out.status.success());
    assert_eq!(summary["result"]["N_P"], 12);
    assert_eq!(summary["result"]["in_Omega_m"], true);
    let line = csv.lines().nth(1).unwrap();
    assert!(line.starts_with("3/50,2,2,true,true,12,201/400,exploratory,"), "{line}");
}

#[test]
fn q_cap_zero_is_rejected_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _, _) = run_config(dir.path(), "bad", "{\n  \"kind\": \"weyl-decay\",\n  \"q_cap\": 0\n}\n", &[], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:3") && err.contains("q_cap"), "{err}");
    assert!(!dir.path().join("bad.csv").exists());
}

#[test]
fn unknown_field_and_bad_json_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _, _) = run_config(dir.path(), "typo", "{\"kind\": \"weyl-decay\",\n\"qcap\": 10}", &[], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("typo.json:2") && err.contains("qcap"), "{err}");
    let (out, _, _) = run_config(dir.path(), "kind", r#"{"kind": "weyl-decay", "q_cap": 10, "map": "nope"}"#, &[], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("field `map`"));
}

#[test]
fn fixtures_listing() {
    let dir = tempfile::tempdir().unwrap();
    let out = radonlab(&["fixtures"], dir.path(), &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let has = |name: &str, body: &str| text.lines().any(|l| l.split_whitespace().next() == Some(name) && l.contains(body));
    assert!(has("t3", "t^3"));
    assert!(has("moment_3", "(t, t^2, t^3)"));
    assert!(text.lines().any(|l| l.trim() == "one_over_y"));
    assert!(has("universal_d2_deg3", "t1^2*t2"));
}

#[test]
fn sparse_runs_are_reproducible_across_thread_counts() {
    let config = r#"{"kind": "sparse-constant", "j_min": 0, "j_max": 4, "trials": 12, "domain_radius": 100, "seed": 11}"#;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, csv_a, sa) = run_config(a.path(), "s", config, &["--threads", "1"], &[]);
    let (ob, csv_b, sb) = run_config(b.path(), "s", config, &["--threads", "1"], &[("RADONLAB_THREADS", "3")]);
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(csv_a, csv_b);
    assert_eq!(sa, sb);
    assert_eq!(csv_a.lines().count(), 13);
    let other = config.replace("\"seed\": 11", "\"seed\": 12");
    let (_, csv_c, _) = run_config(a.path(), "t", &other, &[], &[]);
    let payload = |s: &str| s.lines().skip(1).map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    assert_ne!(payload(&csv_a), payload(&csv_c));
}

#[test]
fn bad_thread_env_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = radonlab(&["fixtures"], dir.path(), &[("RADONLAB_THREADS", "many")]);
    assert!(!out.status.success());
}

#[test]
fn regime_is_recorded_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"kind": "multiplier-approx", "regime": "paper_regime", "delta": 0.009, "delta_prime": 0.0008,
        "j_min": 3, "j_max": 5, "grid": {"samples": 4}, "output": "out/ma"}"#;
    let (out, _, _) = run_config(dir.path(), "ma", config, &[], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/ma.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').nth(6) == Some("paper_regime")), "{csv}");
}

#[test]
fn budget_overrun_is_flagged_partial() {
    // Stopping-time root cubes for (t, t^3) on a 81 x 81 box exceed the volume budget.
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"kind": "sparse-constant", "map": "curve_1_3", "j_min": 0, "j_max": 1, "trials": 2, "domain_radius": 40}"#;
    let (out, csv, summary) = run_config(dir.path(), "p", config, &[], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary["partial"], true);
    assert_eq!(summary["rows"], 0);
    assert!(summary["warnings"][0].as_str().unwrap().contains("budget"));
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn admissibility_reports_each_condition() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, summary) = run_config(dir.path(), "a", r#"{"kind": "admissibility", "map": "moment_3"}"#, &[], &[]);
    assert!(out.status.success());
    assert_eq!(summary["result"]["condition_c"], true);
    assert_eq!(summary["result"]["cz_bounds"], true);
    assert_eq!(csv.lines().filter(|l| l.starts_with("C,")).count(), 3);
}
