use std::path::Path;
use std::process::{Command, Output};

fn flexmarket(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexmarket")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8(o.stderr.clone()).unwrap();
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

/// Final-row value of every column whose name ends with `suffix`.
fn last_row(path: &Path, suffix: &str) -> Vec<(String, f64)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().clone();
    let last = rdr.records().map(Result::unwrap).last().expect("trace has rows");
    header
        .iter()
        .zip(last.iter())
        .filter(|(h, _)| h.ends_with(suffix))
        .map(|(h, v)| (h.to_string(), v.parse().unwrap()))
        .collect()
}

#[test]
fn compare_toy2_reports_small_gap() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = flexmarket(&["run", "--case", "toy2", "--mode", "compare", "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["objective_gap", "flow_deviation", "kkt_residuals", "feasibility_residuals", "nash_gaps"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["objective_gap"].as_f64().unwrap().abs() <= 1e-3);
    let printed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(printed, v);
}

#[test]
fn congested_trace_ends_with_positive_price() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = flexmarket(&["run", "--case", "toy2-congested", "--trace", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mu = last_row(&trace, ".mu");
    assert_eq!(mu.len(), 1);
    assert!(mu[0].1 > 0.0, "{mu:?}");
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["converged"], true);
}

#[test]
fn tighter_ramps_do_not_lower_reliability_prices() {
    let dir = tempfile::tempdir().unwrap();
    let gammas = |scenario: Option<&str>, name: &str| {
        let trace = dir.path().join(name);
        let mut args = vec!["run", "--case", "tri3", "--mode", "compare", "--trace", trace.to_str().unwrap()];
        if let Some(s) = scenario {
            args.extend(["--scenario", s]);
        }
        let out = flexmarket(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        last_row(&trace, ".gamma")
    };
    let base = gammas(None, "base.csv");
    let tight = gammas(Some("ramp_scale=0.75"), "tight.csv");
    assert_eq!(base.len(), 3);
    for ((area, b), (_, t)) in base.iter().zip(&tight) {
        assert!(*t >= b - 1e-6, "{area}: {t} < {b}");
    }
}

#[test]
fn centralized_mode_prints_summary() {
    let out = flexmarket(&["run", "--case", "toy2", "--mode", "centralized"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["total_cost"].as_f64().unwrap() - 40.0).abs() < 1e-4);
}

#[test]
fn scenarios_and_help() {
    let out = flexmarket(&["scenarios"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for flag in ["generator_capacity_scale=", "ramp_scale=", "tie_capacity.<tie-id>="] {
        assert!(text.contains(flag), "{text}");
    }
    assert_eq!(text, stdout(&flexmarket(&["scenarios"])));
    assert_eq!(flexmarket(&["--help"]).status.code(), Some(0));
    assert_eq!(flexmarket(&["run", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_and_config_errors_exit_2_with_json() {
    for args in [
        vec!["scenarios", "--frobnicate"],
        vec!["run", "--case", "toy2", "--scenario", "warp_factor=9"],
        vec!["run", "--case", "no-such-case"],
        vec!["run", "--case", "toy2", "--scenario", "tie_capacity.nope=5"],
    ] {
        let out = flexmarket(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_json(&out)["exit_code"], 2);
    }
}

#[test]
fn infeasible_model_exits_3() {
    // scaled-down capacities cannot meet demand in any area
    let out = flexmarket(&["run", "--case", "toy2", "--scenario", "generator_capacity_scale=0.01"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"], "infeasible");
}

#[test]
fn round_limit_exits_4() {
    let out = flexmarket(&["run", "--case", "toy2-congested", "--max-rounds", "5"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "convergence");
}

#[test]
fn case_file_path_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case.json");
    std::fs::write(&path, flexmarket::grid::bundled_case_text("toy2").unwrap()).unwrap();
    let out = flexmarket(&["run", "--case", path.to_str().unwrap(), "--mode", "centralized"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
