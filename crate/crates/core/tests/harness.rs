use cyclic_urn::harness::{
    cmd_clt, cmd_fixpoint, cmd_mean, cmd_oracle, cmd_rank, cmd_rate, cmd_simulate, Command, ExperimentConfig,
};
use cyclic_urn::residuals::NormalizationMode;
use cyclic_urn::UrnError;

fn small_clt(m: usize, threads: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults(Command::Clt).with_n(300);
    c.m = m;
    c.replicates = 300;
    c.threads = threads;
    c
}

#[test]
fn clt_statistics_do_not_depend_on_thread_count() {
    let a = cmd_clt(&small_clt(9, 1)).unwrap();
    let b = cmd_clt(&small_clt(9, 4)).unwrap();
    assert_eq!(a.results, b.results);
    assert_eq!(a.table.rows, b.table.rows);
    let names = |r: &cyclic_urn::harness::Report| r.checks.iter().map(|c| (c.name.clone(), c.value)).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
}

#[test]
fn fixpoint_statistics_do_not_depend_on_thread_count() {
    let mut c = ExperimentConfig::defaults(Command::Fixpoint).with_n(500);
    c.replicates = 200;
    c.threads = 1;
    let a = cmd_fixpoint(&c).unwrap();
    c.threads = 3;
    let b = cmd_fixpoint(&c).unwrap();
    assert_eq!(a.results, b.results);
}

#[test]
fn reports_have_the_documented_shape() {
    let r = cmd_clt(&small_clt(12, 0)).unwrap();
    let j = r.to_json();
    for key in ["config", "results", "diagnostics", "version"] {
        assert!(j.get(key).is_some(), "missing {key}");
    }
    assert!(j["version"].as_str().unwrap().starts_with("cyclic-urn "));
    assert!(j["diagnostics"]["rng_algorithm"].as_str().unwrap().contains("xoshiro256++"));
    assert_eq!(j["config"]["m"], 12);
    let est = &j["results"]["data"]["checkpoints"][0]["blocks"][0]["estimate"]["covariance"];
    assert_eq!(est["rows"], 12);
    assert_eq!(est["cols"], 12);
    assert_eq!(est["data"].as_array().unwrap().len(), 144);
    // checkpoints n, 2n, 4n
    let ns: Vec<u64> = j["results"]["data"]["checkpoints"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["n"].as_u64().unwrap())
        .collect();
    assert_eq!(ns, vec![300, 600, 1200]);
    assert!(!r.table.rows.is_empty());
    assert!(r.table.rows.iter().all(|row| row.len() == r.table.headers.len()));
}

#[test]
fn power_phase_mode_runs_and_differs_only_on_large_blocks() {
    let mut c = small_clt(7, 0);
    let a = cmd_clt(&c).unwrap();
    c.mode = NormalizationMode::PowerPhase;
    let b = cmd_clt(&c).unwrap();
    let block = |r: &cyclic_urn::harness::Report, i: usize| r.results["checkpoints"][0]["blocks"][i]["estimate"].clone();
    assert_ne!(block(&a, 0), block(&b, 0));
    assert_eq!(block(&a, 1), block(&b, 1));
    assert_eq!(block(&a, 2), block(&b, 2));
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut c = small_clt(7, 0);
    c.blocks = Some(vec![4]);
    assert!(matches!(cmd_clt(&c), Err(UrnError::Parameter(_))));
    let mut c = small_clt(7, 0);
    c.n_limit = 100;
    assert!(matches!(cmd_clt(&c), Err(UrnError::Parameter(_))));
    let mut c = ExperimentConfig::defaults(Command::Fixpoint);
    c.blocks = Some(vec![2]);
    assert!(matches!(cmd_fixpoint(&c), Err(UrnError::Domain(_))));
    let mut c = ExperimentConfig::defaults(Command::Oracle);
    c.n = 40;
    assert!(matches!(cmd_oracle(&c), Err(UrnError::Resource(_))));
}

#[test]
fn deterministic_commands_pass_at_defaults() {
    let r = cmd_rank(&ExperimentConfig::defaults(Command::Rank)).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
    let eig = r.results["eigenvalues"]["eigenvalues"].as_array().unwrap();
    assert_eq!(eig.len(), 12);
    let r = cmd_mean(&ExperimentConfig::defaults(Command::Mean)).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
    let period = r.results["fitted_period_in_log_n"].as_f64().unwrap();
    let want = r.results["period_in_log_n"].as_f64().unwrap();
    assert!((period / want - 1.0).abs() < 1e-3);
    let r = cmd_rate(&ExperimentConfig::defaults(Command::Rate)).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
}

#[test]
fn oracle_passes_in_both_arithmetics() {
    let mut c = ExperimentConfig::defaults(Command::Oracle);
    c.replicates = 20_000;
    c.exact_rational = true;
    let r = cmd_oracle(&c).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
    assert_eq!(r.results["rational_identities"], true);
}

#[test]
fn simulate_reports_a_consistent_path() {
    let mut c = ExperimentConfig::defaults(Command::Simulate).with_n(1000);
    c.m = 5;
    let r = cmd_simulate(&c).unwrap();
    assert!(r.passed());
    let last = r.table.rows.last().unwrap();
    assert_eq!(last[0], "1000");
    let total: u64 = last[1..].iter().map(|x| x.parse::<u64>().unwrap()).sum();
    assert_eq!(total, 1001);
    assert_eq!(r.results["martingale"].as_array().unwrap().len(), 5);
}
