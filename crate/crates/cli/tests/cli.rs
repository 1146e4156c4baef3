use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).display().to_string()
}

fn dpv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpv")).args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    let out = dpv(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid json")
}

fn strings(v: &Value) -> Vec<&str> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect()
}

#[test]
fn load_summarises_the_toy_network() {
    let v = json(&["load", &data("toy4.net")]);
    assert_eq!(v["routers"], 4);
    assert_eq!(v["rules"], 4);
    assert_eq!(v["classes"], 4);
    assert_eq!(v["iatomic"], 1);
}

#[test]
fn verify_reports_reachable_classes() {
    let v = json(&["verify", &data("toy4.net"), "--src", "Y", "--dst", "R"]);
    assert_eq!(strings(&v["reachable"]), ["000/3"]);
    assert_eq!(v["paths"][0]["routers"], serde_json::json!(["Y", "U", "R"]));
}

#[test]
fn unreachable_is_an_answer_unless_asserted() {
    let net = data("repair.net");
    let plain = dpv(&["verify", &net, "--src", "Y", "--dst", "R"]);
    assert_eq!(plain.status.code(), Some(0));
    let asserted = dpv(&["--assert", "verify", &net, "--src", "Y", "--dst", "R"]);
    assert_eq!(asserted.status.code(), Some(1));
}

#[test]
fn verify_restricted_to_prefixes() {
    let net = data("toy4.net");
    let ok = dpv(&["--assert", "verify", &net, "--src", "Y", "--dst", "R", "--prefixes", "000/3"]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = dpv(&["--assert", "verify", &net, "--src", "Y", "--dst", "R", "--prefixes", "000/3,01/2"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn blackholes_and_loops() {
    let v = json(&["blackholes", &data("toy4.net"), "--src", "Y"]);
    let at_u = v["blackholes"].as_array().unwrap().iter().find(|h| h["router"] == "U").unwrap();
    assert_eq!(strings(&at_u["headers"]), ["001/3"]);
    let v = json(&["loops", &data("toy4.net"), "--src", "Y"]);
    assert!(v["loops"].as_array().unwrap().is_empty());
}

#[test]
fn policy_flags_a_missing_waypoint() {
    let out = dpv(&["--assert", "policy", &data("toy4.net"), "--src", "Y", "--dst", "R", "--waypoint", "Q"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("misses waypoint Q"));
    let out = dpv(&["--assert", "policy", &data("toy4.net"), "--src", "Y", "--dst", "R", "--max-len", "3"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn whatif_loses_the_class_on_the_failed_link() {
    let v = json(&["whatif", &data("toy4.net"), "--link", "Y:0-U:1", "--src", "Y", "--dst", "R"]);
    assert_eq!(v["triggered_deletions"], 1);
    assert_eq!(strings(&v["lost"]), ["000/3"]);
    let out = dpv(&["whatif", &data("toy4.net"), "--link", "Y:0-U:0", "--src", "Y", "--dst", "R"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rectify_proposes_and_writes_the_fix() {
    let out_file = std::env::temp_dir().join(format!("dpv-rectify-{}.net", std::process::id()));
    let out = out_file.display().to_string();
    let v = json(&["rectify", &data("repair.net"), "--src", "Y", "--dst", "R", "--intent", "01/2", "--write", &out]);
    assert_eq!(v["fixes"][0]["router"], "Q");
    assert_eq!(v["fixes"][0]["prefix"], "01/2");
    assert_eq!(v["fixes"][0]["port"], 1);
    let after = dpv(&["--assert", "verify", &out, "--src", "Y", "--dst", "R", "--prefixes", "01/2"]);
    assert_eq!(after.status.code(), Some(0));
    std::fs::remove_file(out_file).ok();
}

#[test]
fn gen_then_bench() {
    let dir = std::env::temp_dir();
    let net = dir.join(format!("dpv-gen-{}.net", std::process::id()));
    let upd = dir.join(format!("dpv-gen-{}.updates", std::process::id()));
    let (net, upd) = (net.display().to_string(), upd.display().to_string());
    let v = json(&["gen", "--nodes", "30", "--edges", "60", "--seed", "7", "--holdout", "0.25", "--out", &net, "--stream-out", &upd]);
    assert_eq!(v["routers"], 30);
    assert_eq!(v["edges"], 60);
    assert_eq!(v["held_out"].as_u64().unwrap() + v["rules"].as_u64().unwrap(), 300);
    let b = json(&["bench", &net, "--stream", &upd, "--mode", "batch:10"]);
    assert_eq!(b["events"], 75);
    assert!(b["cdf"]["count"].as_u64().unwrap() >= 8);
    std::fs::remove_file(net).ok();
    std::fs::remove_file(upd).ok();
}

#[test]
fn input_errors_exit_with_two() {
    for args in [
        vec!["load".to_string(), data("missing.net")],
        vec!["verify".into(), data("toy4.net"), "--src".into(), "Y".into(), "--dst".into(), "Nope".into()],
        vec!["verify".into(), data("toy4.net"), "--src".into(), "Y".into(), "--dst".into(), "R".into(), "--prefixes".into(), "0101/4".into()],
        vec!["bench".into(), data("toy4.net"), "--stream".into(), data("toy4.updates"), "--mode".into(), "batch:0".into()],
    ] {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = dpv(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("dpv: "));
    }
}
