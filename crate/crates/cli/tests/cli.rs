use std::path::Path;
use std::process::{Command, Output};

use unifolio_cli::config::RunConfig;
use unifolio_cli::{compare_modes, diagnose, gen_market, run_backtest, CliError};
use unifolio_core::market_model::ingest_csv;

fn unifolio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unifolio"))
        .args(args)
        .output()
        .unwrap()
}

fn config(out: &Path, items: &[(&str, &str)]) -> RunConfig {
    let mut pairs: Vec<(String, String)> = items
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    pairs.push(("out".into(), out.display().to_string()));
    RunConfig::from_pairs(&pairs, &[]).unwrap()
}

fn stdout_value(out: &Output, key: &str) -> String {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing"))
}

#[test]
fn fixed_cover_backtest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = unifolio(&[
        "backtest",
        "--mode",
        "fixed",
        "--out",
        out,
        "--set",
        "days=20",
        "--set",
        "w=0.5,0.5",
    ]);
    assert!(o.status.success());
    let wealth: f64 = stdout_value(&o, "final_wealth").parse().unwrap();
    assert!((wealth / (9.0f64 / 8.0).powi(10) - 1.0).abs() < 1e-12);
    let ledger = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert!(
        ledger.starts_with("day,universal_return,universal_wealth_log,best_wealth_log,regret\n")
    );
    assert_eq!(ledger.lines().count(), 21);
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn exact_two_day_backtest() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_backtest(&config(
        dir.path(),
        &[("days", "2"), ("grid_delta", "0.0001")],
    ))
    .unwrap();
    let wealth: f64 = s.get("final_wealth").unwrap().parse().unwrap();
    assert!((wealth - 13.0 / 12.0).abs() < 1e-6);
}

#[test]
fn dynamic_backtest_writes_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_backtest(&config(
        dir.path(),
        &[
            ("days", "8"),
            ("mode", "dynamic"),
            ("intervals", "2"),
            ("grid_delta", "0.01"),
        ],
    ))
    .unwrap();
    assert_eq!(s.get("intervals"), Some("2"));
    assert!(dir.path().join("ledger.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let missing = unifolio(&[
        "backtest",
        "--out",
        out,
        "--set",
        "market=csv",
        "--set",
        "csv=/no/such/file.csv",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    let unknown = unifolio(&["backtest", "--out", out, "--set", "colour=red"]);
    assert_eq!(unknown.status.code(), Some(2));
    let seedless = unifolio(&["backtest", "--out", out, "--mode", "sampled"]);
    assert_eq!(seedless.status.code(), Some(2));
    let bad_eps = unifolio(&["backtest", "--out", out, "--set", "epsilon=1"]);
    assert_eq!(bad_eps.status.code(), Some(2));
    let huge = unifolio(&[
        "backtest",
        "--out",
        out,
        "--grid-delta",
        "0.001",
        "--set",
        "market=constant",
        "--set",
        "instruments=6",
    ]);
    assert_eq!(huge.status.code(), Some(2));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# cover market\nmode=fixed\ndays=4\nw=0.5,0.5\n").unwrap();
    let out = dir.path().join("out");
    let o = unifolio(&[
        "backtest",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "days=6",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout_value(&o, "mode"), "fixed");
    assert_eq!(stdout_value(&o, "days"), "6");
}

#[test]
fn generated_markets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_market(&config(dir.path(), &[("days", "4")])).unwrap();
    let series = ingest_csv(dir.path().join("market.csv")).unwrap();
    assert_eq!(series[0].prices(), &[1.0; 5]);
    assert_eq!(series[1].prices(), &[1.0, 2.0, 1.0, 2.0, 1.0]);

    gen_market(&config(
        dir.path(),
        &[("market", "constant"), ("instruments", "3")],
    ))
    .unwrap();
    let series = ingest_csv(dir.path().join("market.csv")).unwrap();
    assert!(series.iter().all(|s| s.prices().iter().all(|&p| p == 1.0)));

    let iid = [
        ("market", "iid-lognormal"),
        ("seed", "9"),
        ("days", "30"),
        ("sigma", "0.1"),
    ];
    gen_market(&config(dir.path(), &iid)).unwrap();
    let first = std::fs::read(dir.path().join("market.csv")).unwrap();
    gen_market(&config(dir.path(), &iid)).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("market.csv")).unwrap());
    let series = ingest_csv(dir.path().join("market.csv")).unwrap();
    assert_eq!(series.len(), 2);
    assert_eq!(series[0].len(), 31);

    let csv = dir.path().join("market.csv").display().to_string();
    let s = run_backtest(&config(
        &dir.path().join("bt"),
        &[("market", "csv"), ("csv", &csv), ("mode", "exact")],
    ))
    .unwrap();
    assert_eq!(s.get("days"), Some("30"));
}

#[test]
fn gen_market_rejects_csv_source() {
    let dir = tempfile::tempdir().unwrap();
    let err = gen_market(&config(dir.path(), &[("market", "csv"), ("csv", "x.csv")])).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn compare_single_point_grid() {
    let dir = tempfile::tempdir().unwrap();
    let report = compare_modes(&config(
        dir.path(),
        &[
            ("days", "4"),
            ("grid", "point"),
            ("seed", "1"),
            ("samples", "100"),
            ("burn_in", "10"),
        ],
    ))
    .unwrap();
    assert_eq!(report.summary.get("grid_points"), Some("1"));
    assert_eq!(report.max_deviation, 0.0);
    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(csv.starts_with("day,component,exact,sampled,target_mean,deviation\n"));
}

#[test]
fn compare_seeds_change_only_sampled_column() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        compare_modes(&config(
            dir.path(),
            &[
                ("days", "4"),
                ("seed", seed),
                ("samples", "2000"),
                ("burn_in", "500"),
            ],
        ))
        .unwrap()
    };
    let (a, b) = (run("1"), run("2"));
    assert!(a.rows.iter().zip(&b.rows).all(|(x, y)| x.exact == y.exact));
    assert!(a
        .rows
        .iter()
        .zip(&b.rows)
        .any(|(x, y)| x.sampled != y.sampled));
}

#[test]
fn compare_refuses_large_grids() {
    let dir = tempfile::tempdir().unwrap();
    let err = compare_modes(&config(
        dir.path(),
        &[("seed", "1"), ("grid_delta", "0.01"), ("exact_cap", "50")],
    ))
    .unwrap_err();
    assert!(matches!(err, CliError::GridTooLarge(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn diagnose_reports() {
    let dir = tempfile::tempdir().unwrap();
    let s = diagnose(&config(
        dir.path(),
        &[
            ("days", "6"),
            ("seed", "4"),
            ("grid_delta", "0.1"),
            ("samples", "40000"),
            ("burn_in", "2000"),
            ("epsilon", "0.5"),
        ],
    ))
    .unwrap();
    assert_eq!(s.get("log_concave_eligible"), Some("true"));
    assert_eq!(s.get("log_concavity_pass"), Some("true"));
    assert!(s.get("theory_walk_steps").is_some());
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("day,chain,acceptance_rate,ess,tv_exact\n"));

    let s = diagnose(&config(
        dir.path(),
        &[
            ("strategy", "ma"),
            ("alloc", "step"),
            ("market", "iid-lognormal"),
            ("days", "10"),
            ("margin_policy", "clamp"),
            ("seed", "4"),
            ("grid_delta", "0.25"),
            ("samples", "20000"),
            ("burn_in", "1000"),
            ("tv_threshold", "1"),
        ],
    ))
    .unwrap();
    assert_eq!(s.get("log_concave_eligible"), Some("false"));
    assert_eq!(s.get("derivative_checked"), Some("false"));
}

#[test]
fn diagnose_threshold_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = unifolio(&[
        "diagnose",
        "--out",
        out,
        "--seed",
        "1",
        "--samples",
        "20",
        "--burn-in",
        "0",
        "--set",
        "days=3",
        "--set",
        "tv_threshold=0.0001",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(dir.path().join("diagnostics.csv").exists());
}

#[test]
fn every_strategy_backtests() {
    let dir = tempfile::tempdir().unwrap();
    for items in [
        vec![("strategy", "crpside"), ("side_info", "onehot")],
        vec![("strategy", "ia"), ("k", "2"), ("grid_delta", "0.1")],
        vec![
            ("strategy", "ma"),
            ("alloc", "linear-step"),
            ("margin_policy", "clamp"),
            ("grid_delta", "0.1"),
        ],
        vec![
            ("strategy", "sr"),
            ("k", "3"),
            ("alpha", "0.5"),
            ("margin_policy", "clamp"),
            ("grid_delta", "0.1"),
        ],
    ] {
        let mut items = items;
        items.extend([
            ("market", "iid-lognormal"),
            ("seed", "5"),
            ("days", "12"),
            ("sigma", "0.05"),
        ]);
        let s = run_backtest(&config(dir.path(), &items)).unwrap();
        let regret: f64 = s.get("regret").unwrap().parse().unwrap();
        assert!(regret >= 0.0);
    }
}
