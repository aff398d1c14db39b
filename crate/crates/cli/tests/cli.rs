use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn zsclab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zsclab"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env_remove("ZSCLAB_CACHE")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = zsclab(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes the symmetrized reference policies of the two-stage game into `dir/pols`.
fn reference_dir(dir: &Path, names: &[(&str, &str)]) -> String {
    for (file, r) in names {
        ok(dir, &["op", "symmetrize", "two_stage", &format!("ref:{r}"), "--out", &format!("pols/{file}.json")]);
    }
    dir.join("pols").to_string_lossy().into_owned()
}

#[test]
fn env_list_and_show_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let list = ok(t.path(), &["env", "list"]);
    assert_eq!(list.as_array().unwrap().len(), 5);
    ok(t.path(), &["env", "show", "two_stage", "--out", "ts.json"]);
    let spec = read_json(&t.path().join("ts.json"));
    assert_eq!(spec["horizon"], 1);
    let manifest = read_json(&t.path().join("ts.json.manifest.json"));
    assert_eq!(manifest["seed"], 0);
    assert!(manifest["env_fingerprint"].as_str().unwrap().len() >= 16);
    let ts = t.path().join("ts.json").to_string_lossy().into_owned();
    assert_eq!(ok(t.path(), &["sym", "auts", &ts])["count"], 4);
}

#[test]
fn csv_format_prints_rows() {
    let t = tempfile::tempdir().unwrap();
    let out = zsclab(t.path(), &["--format", "csv", "op", "value", "two_stage", "ref:switch"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "op_value,std_err,exact\n0.5,0.0,true\n");
}

#[test]
fn relabeled_env_checks_as_isomorphic() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["--seed", "3", "sym", "relabel", "asymmetric", "--out", "e.json"]);
    let e = t.path().join("e.json").to_string_lossy().into_owned();
    let f = t.path().join("e.json.labeling.json").to_string_lossy().into_owned();
    assert_eq!(ok(t.path(), &["sym", "check", "asymmetric", &e, &f])["isomorphism"], true);
    assert_eq!(ok(t.path(), &["sym", "auts", &e])["count"], 2);

    let bad = t.path().join("bad.json");
    fs::write(&bad, r#"{"agents":[0,1],"states":[0],"actions":[[1,0],[0,1]],"observations":[[0,1],[1,0]]}"#).unwrap();
    let out = zsclab(t.path(), &["sym", "check", "two_stage", "two_stage", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["violation"]["condition"], "reward");
}

#[test]
fn op_values_and_equivalence() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(ok(t.path(), &["op", "value", "two_stage", "ref:repeat"])["op_value"], 0.5);
    let mp = ok(t.path(), &["op", "value", "matching_pennies", "ref:mixed_optimum"]);
    assert!((mp["op_value"].as_f64().unwrap() - 1.0 / 7.0).abs() < 1e-12);
    let psi = ok(t.path(), &["op", "symmetrize", "two_stage", "ref:repeat", "--out", "psi.json"]);
    assert_eq!(psi["psi_return"], 0.5);
    let p = t.path().join("psi.json").to_string_lossy().into_owned();
    assert_eq!(ok(t.path(), &["op", "equiv", "two_stage", "ref:repeat", &p])["equivalent"], true);
    assert_eq!(ok(t.path(), &["op", "equiv", "two_stage", "ref:repeat", "ref:switch"])["equivalent"], false);
}

#[test]
fn train_writes_policy_curve_and_reproduces_from_manifest() {
    let t = tempfile::tempdir().unwrap();
    let args = ["--seed", "4", "train", "--env", "two_stage", "--steps", "60", "--eval-every", "20", "--out", "p.json", "--curve", "c.csv"];
    let summary = ok(t.path(), &args);
    assert_eq!(summary["env_steps"], 60 * 32 * 2);
    let curve = fs::read_to_string(t.path().join("c.csv")).unwrap();
    assert!(curve.starts_with("update_index,mc_op_estimate,exact_op_value,entropy\n"));
    assert_eq!(curve.lines().count(), 61);
    let policy = read_json(&t.path().join("p.json"));
    assert!(policy["agents"][0]["entries"][0]["logits"].is_array());

    let manifest = read_json(&t.path().join("c.csv.manifest.json"));
    assert_eq!(manifest["config"]["n_steps"], 60);
    let argv: Vec<String> = manifest["command"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    let again = Command::new(&argv[0]).args(&argv[1..]).output().unwrap();
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(t.path().join("c.csv")).unwrap(), curve);
    let p = t.path().join("p.json").to_string_lossy().into_owned();
    assert!(ok(t.path(), &["op", "value", "two_stage", &p])["op_value"].as_f64().unwrap() > -1.0);
}

#[test]
fn tiebreak_xp_and_cluster_on_reference_policies() {
    let t = tempfile::tempdir().unwrap();
    let pols = reference_dir(t.path(), &[("a_repeat", "repeat"), ("b_switch", "switch"), ("c_repeat", "repeat")]);
    let ranked = ok(t.path(), &["--exact", "tiebreak", "--env", "two_stage", "--policies", &pols, "--hash-seed", "2"]);
    let ranked = ranked.as_array().unwrap();
    assert_eq!(ranked.len(), 3);
    assert_eq!(ranked.iter().filter(|r| r["selected"] == true).count(), 1);
    assert_eq!(read_json(&t.path().join("ranked.json")).as_array().unwrap().len(), 3);
    let (rep, sw): (Vec<_>, Vec<_>) = ranked.iter().partition(|r| r["policy"].as_str().unwrap().ends_with("repeat"));
    assert_eq!(rep[0]["value"], rep[1]["value"]);
    assert_ne!(rep[0]["value"], sw[0]["value"]);

    let xp = ok(t.path(), &["--exact", "xp", "--env", "two_stage", "--policies", &pols, "--svg", "m.svg"]);
    assert!((xp["avg_offdiag"].as_f64().unwrap() - (-0.5 * 4.0 + 0.5 * 2.0) / 6.0).abs() < 1e-12);
    let csv = fs::read_to_string(t.path().join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), ",a_repeat,b_switch,c_repeat");
    assert_eq!(fs::read_to_string(t.path().join("m.svg")).unwrap().matches("<rect").count(), 9);

    let classes = ok(t.path(), &["--exact", "cluster", "--env", "two_stage", "--policies", &pols]);
    let classes = classes.as_array().unwrap();
    assert_eq!(classes.len(), 2);
    assert_eq!(classes[0]["members"], serde_json::json!(["a_repeat", "c_repeat"]));

    let mc = ok(t.path(), &["xp", "--env", "two_stage", "--policies", &pols, "--episodes", "256", "--out", "mc.csv"]);
    assert!((mc["avg_offdiag"].as_f64().unwrap() + 1.0 / 6.0).abs() < 0.15);
}

#[test]
fn lfc_with_tie_breaking_reaches_op_value() {
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("procs.json");
    fs::write(&spec, r#"{"all": {"tie_break": {"inner": {"pool": ["ref:repeat", "ref:switch"]}, "k": 32, "exact": true}}}"#).unwrap();
    let v = ok(t.path(), &["lfc", "--env", "two_stage", "--procedures", spec.to_str().unwrap(), "--outer", "40"]);
    assert_eq!(v["mean"], 0.5);
    fs::write(&spec, r#"{"principals": [{"fixed": "ref:repeat"}, {"fixed": "ref:switch"}]}"#).unwrap();
    let v = ok(t.path(), &["lfc", "--env", "two_stage", "--procedures", spec.to_str().unwrap(), "--outer", "20"]);
    assert_eq!(v["mean"], -0.5);
    fs::write(&spec, r#"{"all": {"bogus": 1}}"#).unwrap();
    assert_eq!(code(&zsclab(t.path(), &["lfc", "--env", "two_stage", "--procedures", spec.to_str().unwrap()])), 2);
}

#[test]
fn verify_reports_every_item_and_exit_status_matches() {
    let t = tempfile::tempdir().unwrap();
    let out = zsclab(t.path(), &["verify"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 11);
    let any_fail = checks.iter().any(|c| c["status"] == "fail");
    assert_eq!(code(&out), if any_fail { 1 } else { 0 });
    for c in checks {
        assert!(c["target"].is_string() && c.get("value").is_some() && c.get("tolerance").is_some());
    }
    assert_eq!(read_json(&t.path().join("verify_report.json")), report);
}

#[test]
fn verify_with_perturbed_reward_fails_op_checks() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["env", "show", "two_stage", "--out", "ts.json"]);
    let p = t.path().join("ts.json");
    let mut spec = read_json(&p);
    spec["reward"][0][0] = serde_json::json!(1.5);
    fs::write(&p, spec.to_string()).unwrap();
    let out = zsclab(t.path(), &["verify", "--two-stage", p.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["checks"][1]["status"], "fail");
    assert_eq!(report["checks"][0]["status"], "fail");
}

#[test]
fn experiment_emits_tables_figures_and_reproduces() {
    let t = tempfile::tempdir().unwrap();
    let args = [
        "--exact", "experiment", "--env", "two_stage", "--runs", "3", "--seeds-per-run", "2", "--k-list", "1,2", "--steps", "100",
        "--hash-seeds", "2",
    ];
    let summary = ok(t.path(), &args);
    assert_eq!(summary["avg_offdiag"].as_array().unwrap().len(), 2);
    for f in [
        "k_table.csv", "k_curve.svg", "xp_k1.csv", "xp_k2.svg", "xp_full.csv", "classes.csv", "classes.svg", "chi.csv",
        "op_values.csv", "training_curves.csv", "training_curves.svg", "policies/r2s1.json", "manifest.json",
    ] {
        assert!(t.path().join(f).exists(), "{f}");
    }
    let first = fs::read_to_string(t.path().join("k_table.csv")).unwrap();
    let xp = fs::read_to_string(t.path().join("xp_full.csv")).unwrap();
    assert_eq!(first.lines().next().unwrap(), "k,mean,std,hash_seed_0,hash_seed_1");
    ok(t.path(), &args);
    assert_eq!(fs::read_to_string(t.path().join("k_table.csv")).unwrap(), first);
    assert_eq!(fs::read_to_string(t.path().join("xp_full.csv")).unwrap(), xp);
    let manifest = read_json(&t.path().join("manifest.json"));
    assert_eq!(manifest["config"]["runs"], 3);
    assert!(manifest["artifacts"].as_array().unwrap().len() > 10);
}

#[test]
fn exit_codes_for_usage_and_caps() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&zsclab(t.path(), &["op", "value", "no_such_env", "ref:repeat"])), 2);
    assert_eq!(code(&zsclab(t.path(), &["train", "--bogus"])), 2);
    assert_eq!(code(&zsclab(t.path(), &["op", "symmetrize", "lever", "ref:unique_lever"])), 3);
    assert_eq!(code(&zsclab(t.path(), &["train", "--env", "two_stage", "--steps", "0"])), 2);
}

#[test]
fn automorphism_cache_is_written_and_reused() {
    let t = tempfile::tempdir().unwrap();
    let cache = t.path().join("cache");
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_zsclab"))
            .args(["sym", "auts", "asymmetric"])
            .env("ZSCLAB_CACHE", &cache)
            .output()
            .unwrap()
    };
    let first = run();
    assert!(first.status.success());
    let files: Vec<_> = fs::read_dir(&cache).unwrap().collect();
    assert_eq!(files.len(), 1);
    assert_eq!(run().stdout, first.stdout);
}
