//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{integrate_unit, poly_mul, random_case, random_market};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unifolio_cli::compare_modes;
use unifolio_cli::config::RunConfig;
use unifolio_core::market_model::{
    cover_market, iid_lognormal_prices, portfolio_market, portfolio_scenario, short_return,
    trading_scenario, BreachPolicy, EnvironmentSnapshot, MarginSpec,
};
use unifolio_core::sampler::{
    chain_rng, gamma_t, log_concavity_check, metropolis_step, required_samples, tv_diagnostic,
    ChainState, TargetDistribution, Walk,
};
use unifolio_core::simplex_geom::{
    build_grid, monte_carlo_simplex_volume, sample_uniform_point, GridSpec, ParamSpace,
};
use unifolio_core::strategies::{
    sr_describe, Crp, CrpSide, FloorSchedule, MaAllocation, MovingAverage, ParamPoint,
    SideInfoModel, SrAllocation, Strategy, SupportResistance,
};
use unifolio_core::universalizer::{cumulative_return, regret, universal_describe, universal_run};

const COVER_REL_TOL: f64 = 1e-12;
const COVER_TIME: Duration = Duration::from_secs(1);
const INTEGRAL_TOL: f64 = 1e-6;
const INTEGRAL_TIME: Duration = Duration::from_secs(10);
const DAY_ONE_TOL: f64 = 1e-5;
const TELESCOPE_REL_TOL: f64 = 1e-10;
const TELESCOPE_TIME: Duration = Duration::from_secs(30);
const NO_POSITION_TOL: f64 = 1e-12;
const VOLUME_REL_TOL: f64 = 0.02;
const CONCAVITY_TOL: f64 = 1e-6;
const STATIONARY_TV: f64 = 0.02;
const BALANCE_REL_TOL: f64 = 1e-15;
const SAMPLED_MAX_DEVIATION: f64 = 0.005;
const SLOPE_TARGET: f64 = -0.5;
const SLOPE_TOL: f64 = 0.1;
const REGRET_CONSTANT: f64 = 8.0;
const REGRET_TIME: Duration = Duration::from_secs(120);

type Criterion = (&'static str, fn() -> Check);

struct Check {
    pass: bool,
    detail: String,
}

impl Check {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn line(delta: f64) -> GridSpec {
    build_grid(ParamSpace::new(2, 1).unwrap(), delta).unwrap()
}

fn cover_example() -> Check {
    let start = Instant::now();
    let w = ParamPoint::from_blocks(&[vec![0.5, 0.5]]).unwrap();
    let ledger = cumulative_return(&Crp::new(2), &w, &cover_market(20), None).unwrap();
    let elapsed = start.elapsed();
    let expected = (9.0f64 / 8.0).powi(10);
    let rel = (ledger.final_wealth() - expected).abs() / expected;
    Check::new(
        rel < COVER_REL_TOL && elapsed < COVER_TIME,
        format!("relative error {rel:.2e}, {elapsed:.2?}"),
    )
}

fn two_day_integral() -> Check {
    let oracle = integrate_unit(&poly_mul(&[1.0, 1.0], &[1.0, -0.5]));
    let market = cover_market(2);
    let mut errors = Vec::new();
    for delta in [0.1, 0.01, 0.001] {
        let run = universal_run(&Crp::new(2), &line(delta), &market, None).unwrap();
        errors.push((run.ledger.final_wealth() - oracle).abs());
    }
    let start = Instant::now();
    let run = universal_run(&Crp::new(2), &line(1e-4), &market, None).unwrap();
    let elapsed = start.elapsed();
    let err = (run.ledger.final_wealth() - oracle).abs();
    let converging = errors.windows(2).all(|p| p[1] < p[0]) && err < errors[2];
    Check::new(
        converging && err < INTEGRAL_TOL && elapsed < INTEGRAL_TIME,
        format!(
            "errors {:.1e}/{:.1e}/{:.1e} then {err:.2e} at 1e-4, {elapsed:.2?}",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn day_one_description() -> Check {
    let num = integrate_unit(&poly_mul(&[0.0, 1.0], &[1.0, 1.0]));
    let den = integrate_unit(&[1.0, 1.0]);
    let u = universal_describe(&Crp::new(2), &line(1e-4), &cover_market(2), 1, None).unwrap();
    let err = (u.as_slice()[1] - num / den).abs();
    Check::new(
        err < DAY_ONE_TOL,
        format!("weight {:.9}, error {err:.2e}", u.as_slice()[1]),
    )
}

/// Cell-weighted mean of `R_n` over the grid, from independent per-point ledgers.
fn grid_mean_log(
    strategy: &dyn Strategy,
    grid: &GridSpec,
    market: &unifolio_core::market_model::MarketSeries,
) -> f64 {
    let logs: Vec<f64> = grid.log_cell_weights();
    let values: Vec<f64> = (0..grid.len())
        .map(|g| {
            cumulative_return(strategy, &grid.point(g), market, None)
                .unwrap()
                .final_log_wealth()
                + logs[g]
        })
        .collect();
    let lse = |v: &[f64]| {
        let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
    };
    lse(&values) - lse(&logs)
}

fn telescoping() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut largest_grid = 0;
    for case in 0..200u64 {
        let kind = (case % 5) as usize;
        let n = 1 + (case as usize / 5) % 10;
        let (s, market, grid) = random_case(kind, n, 5000 + case);
        largest_grid = largest_grid.max(grid.len());
        let run = universal_run(s.as_ref(), &grid, &market, None).unwrap();
        let product: f64 = run.ledger.daily_returns().iter().product();
        let rel = (product.ln() - grid_mean_log(s.as_ref(), &grid, &market))
            .exp_m1()
            .abs();
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    Check::new(
        worst < TELESCOPE_REL_TOL && largest_grid <= 100 && elapsed < TELESCOPE_TIME,
        format!("worst relative gap {worst:.2e}, largest grid {largest_grid}, {elapsed:.2?}"),
    )
}

fn floor_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for case in 0..100u64 {
        let n = rng.random_range(1..=50);
        let eps = if case % 2 == 0 { 0.1 } else { 0.5 };
        let (s, market, _) = random_case((case % 5) as usize, n, 9000 + case);
        let w = sample_uniform_point(s.meta().space(), &mut rng);
        let floor = FloorSchedule::new(eps).unwrap();
        let raw = cumulative_return(s.as_ref(), &w, &market, None).unwrap();
        let floored = cumulative_return(s.as_ref(), &w, &market, Some(&floor)).unwrap();
        let ratio = floored.final_wealth() / raw.final_wealth();
        tightest = tightest.min(ratio / (1.0 - eps));
        if floored.final_wealth() < (1.0 - eps) * raw.final_wealth() {
            violations += 1;
        }
    }
    Check::new(
        violations == 0,
        format!("{violations} violations, smallest ratio to bound {tightest:.4}"),
    )
}

fn no_position() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for alpha in [0.25, 0.5, 1.0] {
        let margin = MarginSpec::new(alpha).unwrap();
        for _ in 0..1000 {
            // Price strictly between weighted support and resistance.
            let low = rng.random_range(0.5..0.9);
            let high = rng.random_range(1.1..1.5);
            let mut env = EnvironmentSnapshot::empty(3);
            env.min_history = vec![low, low * 0.95];
            env.max_history = vec![high, high * 1.05];
            env.current_price = 1.0;
            let w = ParamPoint::from_blocks(&[{
                let a = rng.random_range(0.0..1.0);
                vec![a, 1.0 - a]
            }])
            .unwrap();
            let desc = sr_describe(&w, &env, SrAllocation::Step, margin, 3).unwrap();
            let x = rng.random_range(1e-9..margin.limit());
            let r = desc.dot(&[x, short_return(x, margin).unwrap()]);
            worst = worst.max((r - 1.0).abs());
        }
    }
    Check::new(
        worst <= NO_POSITION_TOL,
        format!("largest |return - 1| {worst:.2e}"),
    )
}

fn simplex_volume() -> Check {
    let mut details = Vec::new();
    let mut pass = true;
    for k in [2usize, 3, 4] {
        let factorial: f64 = (1..k).map(|i| i as f64).product();
        let exact = (k as f64).sqrt() / factorial;
        let estimate = monte_carlo_simplex_volume(k, 1_000_000, 8 + k as u64);
        let rel = (estimate - exact).abs() / exact;
        pass &= rel < VOLUME_REL_TOL;
        details.push(format!("k={k}: {rel:.2e}"));
    }
    Check::new(pass, details.join(", "))
}

fn log_concavity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut worst = f64::NEG_INFINITY;
    let mut points = 0;
    let margin = MarginSpec::new(0.5).unwrap();
    for kind in 0..4 {
        for round in 0..10u64 {
            let n = rng.random_range(1..=20);
            let seed = 100 * kind as u64 + round;
            let (strategy, market): (Box<dyn Strategy>, _) = match kind {
                0 => {
                    let m = rng.random_range(2..=3);
                    (Box::new(Crp::new(m)), random_market(&mut rng, m, n))
                }
                1 => {
                    let prices = iid_lognormal_prices(3, n + 2, 0.0, 0.1, seed).unwrap();
                    let sc = portfolio_scenario(&prices, 1).unwrap();
                    let s = CrpSide::new(3, SideInfoModel::Proportional, sc.environments).unwrap();
                    (Box::new(s), sc.market)
                }
                2 => {
                    let prices = iid_lognormal_prices(1, n + 3, 0.0, 0.08, seed)
                        .unwrap()
                        .remove(0);
                    let sc = trading_scenario(&prices, margin, 2, BreachPolicy::Clamp).unwrap();
                    let s = MovingAverage::new(2, MaAllocation::Line, sc.environments).unwrap();
                    (Box::new(s), sc.market)
                }
                _ => {
                    let prices = iid_lognormal_prices(1, n + 4, 0.0, 0.08, seed)
                        .unwrap()
                        .remove(0);
                    let sc = trading_scenario(&prices, margin, 3, BreachPolicy::Clamp).unwrap();
                    let s = SupportResistance::new(3, SrAllocation::Plane, margin, sc.environments)
                        .unwrap();
                    (Box::new(s), sc.market)
                }
            };
            let report =
                log_concavity_check(strategy.as_ref(), &market, None, 5, seed, false).unwrap();
            assert!(report.eligible);
            worst = worst.max(report.max_eigenvalue);
            points += report.points;
        }
    }
    Check::new(
        worst <= CONCAVITY_TOL,
        format!("{points} points, largest eigenvalue {worst:.2e}"),
    )
}

fn stationarity() -> Check {
    let grid = line(0.25);
    let walk = Walk::new(&grid);
    let target =
        TargetDistribution::from_log_weights((1..=5).map(|v| (v as f64).ln()).collect()).unwrap();
    let mut chain = ChainState::new(0, chain_rng(42, 0, 0));
    let mut counts = vec![0u64; 5];
    for _ in 0..1_000_000 {
        metropolis_step(&mut chain, &walk, &target);
        counts[chain.position] += 1;
    }
    let tv = tv_diagnostic(&counts, &target, 100).unwrap().tv;

    let pi = target.probabilities();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for u in 0..grid.len() {
        for v in grid.neighbors(u).into_iter().flatten() {
            let lhs = pi[u] * target.transition_probability(&walk, u, v);
            let rhs = pi[v] * target.transition_probability(&walk, v, u);
            worst = worst.max((lhs - rhs).abs() / lhs.max(rhs));
            pairs += 1;
        }
    }
    Check::new(
        grid.len() == 5 && tv < STATIONARY_TV && worst <= BALANCE_REL_TOL && pairs == 8,
        format!("TV {tv:.4}, {pairs} directed pairs, balance gap {worst:.1e}"),
    )
}

fn compare_config(samples: usize, seed: u64, out: &Path) -> RunConfig {
    let pairs: Vec<(String, String)> = [
        ("market", "cover".to_string()),
        ("days", "10".into()),
        ("strategy", "crp".into()),
        ("grid_delta", "0.01".into()),
        ("samples", samples.to_string()),
        ("chains", "8".into()),
        ("thin", "1000".into()),
        ("burn_in", "20000".into()),
        ("seed", seed.to_string()),
        ("out", out.display().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    RunConfig::from_pairs(&pairs, &[("mode".into(), "sampled".into())]).unwrap()
}

fn sampled_vs_exact() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let sizes = [1_000usize, 10_000, 100_000];
    let seeds: Vec<u64> = (1..=8).collect();
    let mut pooled = Vec::new();
    let mut max_deviation = f64::NAN;
    for &n in &sizes {
        let mut sq = 0.0;
        for &seed in &seeds {
            let report = compare_modes(&compare_config(n, seed, dir.path())).unwrap();
            sq += report.rms_target_error.powi(2);
            if n == 100_000 && seed == 1 {
                max_deviation = report.max_deviation;
            }
        }
        pooled.push((sq / seeds.len() as f64).sqrt());
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = pooled.iter().map(|r| r.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    Check::new(
        max_deviation < SAMPLED_MAX_DEVIATION && (slope - SLOPE_TARGET).abs() <= SLOPE_TOL,
        format!(
            "max deviation {max_deviation:.4} at N=1e5, rms {:.2e}/{:.2e}/{:.2e}, slope {slope:.3}",
            pooled[0], pooled[1], pooled[2]
        ),
    )
}

fn regret_decay() -> Check {
    let start = Instant::now();
    let mut worst_scaled: f64 = 0.0;
    let mut shrinks = true;
    for seed in [2024u64, 2025, 2026] {
        let prices = iid_lognormal_prices(2, 501, 0.0, 0.05, seed).unwrap();
        let market = portfolio_market(&prices).unwrap();
        let run = universal_run(&Crp::new(2), &line(0.01), &market, None).unwrap();
        let gaps = regret(&run.ledger, &run.best_log).unwrap();
        for n in [50usize, 100, 200, 500] {
            worst_scaled = worst_scaled.max(gaps[n - 1] * n as f64 / (n as f64).ln());
        }
        shrinks &= gaps[499] < gaps[49];
    }
    let elapsed = start.elapsed();
    Check::new(
        worst_scaled <= REGRET_CONSTANT && shrinks && elapsed < REGRET_TIME,
        format!(
            "largest gap*n/ln n {worst_scaled:.3}, gap(500) < gap(50): {shrinks}, {elapsed:.2?}"
        ),
    )
}

fn calculators() -> Check {
    let n = required_samples(2, 0, 0.5, 0.1).unwrap();
    let g = gamma_t(2, 1, 0.5);
    let expected = 0.5f64 * 0.5 / (4.0 * 2.0 * 16.0);
    Check::new(
        n == 1889 && g == expected,
        format!("required_samples {n}, gamma {g}"),
    )
}

fn run_cli(args: &[&str], out: &Path) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_unifolio"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files.push(("stdout".into(), status.stdout));
    files
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 3] = [
        &[
            "backtest",
            "--mode",
            "sampled",
            "--seed",
            "7",
            "--samples",
            "4000",
            "--burn-in",
            "2000",
            "--set",
            "days=8",
        ],
        &[
            "backtest",
            "--mode",
            "sampled",
            "--seed",
            "11",
            "--grid-delta",
            "0.1",
            "--samples",
            "3000",
            "--burn-in",
            "1000",
            "--set",
            "strategy=ma",
            "--set",
            "market=iid-lognormal",
            "--set",
            "days=12",
            "--set",
            "margin_policy=clamp",
        ],
        &[
            "compare",
            "--seed",
            "3",
            "--samples",
            "2000",
            "--burn-in",
            "500",
            "--set",
            "days=4",
        ],
    ];
    let mut identical = true;
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        let a = run_cli(args, &dir.path().join(format!("{i}a")));
        let b = run_cli(args, &dir.path().join(format!("{i}b")));
        identical &= a == b;
        files += a.len();
    }
    Check::new(
        identical,
        format!(
            "{} runs, {files} outputs compared byte for byte",
            runs.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("cover example wealth", cover_example),
        ("two-day universal wealth", two_day_integral),
        ("day-one universal description", day_one_description),
        ("telescoping identity", telescoping),
        ("floor bound", floor_bound),
        ("no-position identity", no_position),
        ("simplex volume", simplex_volume),
        ("log-concavity", log_concavity),
        ("sampler stationarity", stationarity),
        ("sampled versus exact", sampled_vs_exact),
        ("regret decay", regret_decay),
        ("formula calculators", calculators),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2} {verdict} {name}: {}",
            i + 1,
            outcome.detail
        );
        failed += usize::from(!outcome.pass);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
