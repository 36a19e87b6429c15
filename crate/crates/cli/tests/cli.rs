use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclic-urn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

#[test]
fn rank_passes_and_emits_json() {
    let out = run(&["rank"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&out);
    assert_eq!(j["results"]["command"], "rank");
    assert_eq!(j["results"]["pass"], true);
    assert!(j["version"].as_str().unwrap().contains("rev"));
}

#[test]
fn csv_output_has_a_header_and_rows() {
    let out = run(&["mean", "--m", "13", "--n", "10000", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,i,mean,expansion"));
    assert!(lines.count() >= 13 * 7);
}

#[test]
fn out_flag_writes_the_report_to_a_file() {
    let path = std::env::temp_dir().join(format!("cyclic-urn-cli-{}.json", std::process::id()));
    let out = run(&["simulate", "--m", "7", "--n", "500", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).ok();
    let counts: u64 = j["results"]["data"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 501);
    assert_eq!(j["config"]["seed"], 3);
}

#[test]
fn same_seed_gives_identical_reports_at_any_thread_count() {
    let base = ["clt", "--m", "7", "--n", "200", "--reps", "200", "--seed", "11"];
    let a = run(&[&base[..], &["--threads", "1"]].concat());
    let b = run(&[&base[..], &["--threads", "3"]].concat());
    assert_eq!(json(&a)["results"], json(&b)["results"]);
}

#[test]
fn exit_codes() {
    // tolerance failure: an impossible band
    let out = run(&["fixpoint", "--m", "7", "--n", "2000", "--reps", "200", "--sigmas", "1e-9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
    // usage error
    assert_eq!(run(&["clt", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["clt", "--mode", "other"]).status.code(), Some(2));
    // parameter and domain errors
    assert_eq!(run(&["clt", "--m", "1"]).status.code(), Some(2));
    assert_eq!(run(&["fixpoint", "--m", "7", "--k", "3"]).status.code(), Some(2));
    // resource guard
    let out = run(&["oracle", "--m", "9", "--n", "40"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resource guard"));
}

#[test]
fn oracle_exact_rational_mode() {
    let out = run(&["oracle", "--m", "5", "--n", "5", "--reps", "5000", "--exact-rational"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let j = json(&out);
    assert_eq!(j["results"]["data"]["rational_identities"], true);
    let law = &j["results"]["data"]["example_law"];
    assert!(law.to_string().contains('/'));
}
