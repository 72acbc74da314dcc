//! Orchestration for the `unifolio` command-line tool: market loading,
//! strategy construction, backtests, sampler diagnostics and comparisons of
//! exact against sampled universalization. Every command writes its files
//! into the configured output directory and returns a summary of
//! `key=value` pairs.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;
use unifolio_core::market_model::{
    constant_prices, cover_prices, iid_lognormal_prices, ingest_csv, portfolio_scenario,
    trading_scenario, write_price_csv, MarginSpec, MarketError, MarketSeries, PriceSeries,
    Scenario,
};
use unifolio_core::sampler::{
    log_concavity_check, sampled_universal_run, theoretical_budget, DampingSpec, SampledRun,
    SampledRunConfig, SamplerBudget, SamplerError,
};
use unifolio_core::simplex_geom::{build_grid_capped, GeomError, GridSpec, DEFAULT_GRID_CAP};
use unifolio_core::strategies::{
    derivative_bound_check, Crp, CrpSide, FloorSchedule, IndicatorAggregation, MovingAverage,
    ParamPoint, Strategy, StrategyError, SupportResistance,
};
use unifolio_core::universalizer::{
    cumulative_return, dynamic_universal_run, regret, universal_run, DynamicSchedule,
    UniversalError, WealthLedger,
};

pub use config::{DampingChoice, MarketSource, Mode, RunConfig, StrategyKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("grid too large: {0}")]
    GridTooLarge(String),
    #[error("threshold exceeded: {0}")]
    Threshold(String),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) | CliError::Io { .. } => 1,
            CliError::Config(_) | CliError::GridTooLarge(_) => 2,
            CliError::Data(_) => 3,
            CliError::Threshold(_) => 4,
        }
    }
}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::GridTooLarge { .. } => CliError::GridTooLarge(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<UniversalError> for CliError {
    fn from(e: UniversalError) -> Self {
        match e {
            UniversalError::Geometry(g) => g.into(),
            UniversalError::NonPositiveReturn { .. } => CliError::Data(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Universal(u) => u.into(),
            SamplerError::Geometry(g) => g.into(),
            SamplerError::GridTooLarge { .. } => CliError::GridTooLarge(e.to_string()),
            SamplerError::InvalidBudget(_)
            | SamplerError::BudgetTooSmall { .. }
            | SamplerError::InvalidDamping(_) => CliError::Config(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Ordered `key=value` summary of a command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary(pub Vec<(String, String)>);

impl Summary {
    fn push(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.0.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }
}

/// Strategy, market, grid and floor assembled from a configuration.
pub struct Prepared {
    pub strategy: Box<dyn Strategy>,
    pub market: MarketSeries,
    pub grid: GridSpec,
    pub floor: Option<FloorSchedule>,
}

/// Price series named by the market source.
pub fn load_prices(config: &RunConfig) -> Result<Vec<PriceSeries>> {
    match &config.market {
        MarketSource::Cover => Ok(cover_prices(config.days)),
        MarketSource::Constant => Ok(constant_prices(config.instruments, config.days)),
        MarketSource::IidLognormal { mu, sigma } => {
            let seed = config
                .seed
                .ok_or_else(|| CliError::Config("market=iid-lognormal needs a seed".into()))?;
            iid_lognormal_prices(config.instruments, config.days, *mu, *sigma, seed)
                .map_err(|e| CliError::Config(e.to_string()))
        }
        MarketSource::Csv(path) => Ok(ingest_csv(path)?),
    }
}

fn ticker_series<'a>(config: &RunConfig, series: &'a [PriceSeries]) -> Result<&'a PriceSeries> {
    match &config.ticker {
        None => series
            .first()
            .ok_or_else(|| CliError::Data("market has no instruments".into())),
        Some(t) => series
            .iter()
            .find(|s| s.ticker() == t)
            .ok_or_else(|| CliError::Data(format!("ticker {t:?} not found"))),
    }
}

/// Builds the strategy with its market and grid.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let series = load_prices(config)?;
    let (strategy, market): (Box<dyn Strategy>, MarketSeries) = match config.strategy {
        StrategyKind::Crp => {
            let Scenario { market, .. } = portfolio_scenario(&series, 0)?;
            (Box::new(Crp::new(market.m())), market)
        }
        StrategyKind::CrpSide(model) => {
            let Scenario {
                market,
                environments,
            } = portfolio_scenario(&series, 1)?;
            (
                Box::new(CrpSide::new(market.m(), model, environments)?),
                market,
            )
        }
        StrategyKind::IndicatorAggregation => {
            let Scenario {
                market,
                environments,
            } = portfolio_scenario(&series, config.k)?;
            (
                Box::new(IndicatorAggregation::new(
                    config.k,
                    market.m(),
                    environments,
                )?),
                market,
            )
        }
        StrategyKind::MovingAverage(alloc) => {
            let margin =
                MarginSpec::new(config.alpha).map_err(|e| CliError::Config(e.to_string()))?;
            let prices = ticker_series(config, &series)?;
            let Scenario {
                market,
                environments,
            } = trading_scenario(prices, margin, config.k, config.margin_policy)?;
            (
                Box::new(MovingAverage::new(config.k, alloc, environments)?),
                market,
            )
        }
        StrategyKind::SupportResistance(alloc) => {
            let margin =
                MarginSpec::new(config.alpha).map_err(|e| CliError::Config(e.to_string()))?;
            let prices = ticker_series(config, &series)?;
            let Scenario {
                market,
                environments,
            } = trading_scenario(prices, margin, config.k, config.margin_policy)?;
            (
                Box::new(SupportResistance::new(
                    config.k,
                    alloc,
                    margin,
                    environments,
                )?),
                market,
            )
        }
    };
    let grid = build_grid_capped(strategy.meta().space(), config.grid_delta, DEFAULT_GRID_CAP)?;
    let floor = config.epsilon.map(FloorSchedule::new).transpose()?;
    let mut prepared = Prepared {
        strategy,
        market,
        grid,
        floor,
    };
    if config.single_point_grid {
        prepared.grid = GridSpec::single_point(&fixed_point(config, &prepared)?);
    }
    Ok(prepared)
}

fn fixed_point(config: &RunConfig, p: &Prepared) -> Result<ParamPoint> {
    let space = p.strategy.meta().space();
    match &config.w {
        None => Ok(space.center()),
        Some(coords) => {
            if coords.len() != space.k * space.blocks {
                return Err(CliError::Config(format!(
                    "w needs {} coordinates, got {}",
                    space.k * space.blocks,
                    coords.len()
                )));
            }
            Ok(ParamPoint::new(space.k, coords.clone())?)
        }
    }
}

fn damping(config: &RunConfig, p: &Prepared) -> Result<Option<DampingSpec>> {
    let k = p.strategy.meta().k;
    Ok(match config.damping {
        DampingChoice::Off => None,
        DampingChoice::Auto => Some(DampingSpec::for_grid(p.grid.delta(), k)?),
        DampingChoice::Manual { gamma, sigma } => Some(DampingSpec::new(gamma, sigma, k)?),
    })
}

fn budget(config: &RunConfig) -> SamplerBudget {
    SamplerBudget {
        n_samples: config.samples,
        burn_in: config.burn_in,
        thin: config.thin,
        chains: config.chains,
        min_samples: config.min_samples,
    }
}

fn require_seed(config: &RunConfig) -> Result<u64> {
    config
        .seed
        .ok_or_else(|| CliError::Config("sampling needs a seed".into()))
}

fn sampled(config: &RunConfig, p: &Prepared, exact_cap: Option<usize>) -> Result<SampledRun> {
    let run_config = SampledRunConfig {
        budget: budget(config),
        damping: damping(config, p)?,
        seed: require_seed(config)?,
        exact_cap,
    };
    Ok(sampled_universal_run(
        p.strategy.as_ref(),
        &p.grid,
        &p.market,
        p.floor.as_ref(),
        &run_config,
    )?)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(path)
}

fn ledger_csv(ledger: &WealthLedger, benchmark: &[f64], gaps: &[f64]) -> String {
    let mut out =
        String::from("day,universal_return,universal_wealth_log,best_wealth_log,regret\n");
    let path = ledger.log_path();
    for (i, r) in ledger.daily_returns().iter().enumerate() {
        let n = i + 1;
        let _ = writeln!(out, "{n},{r},{},{},{}", path[n], benchmark[n], gaps[i]);
    }
    out
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Fixed => "fixed",
        Mode::Exact => "exact",
        Mode::Sampled => "sampled",
        Mode::Dynamic => "dynamic",
    }
}

/// Runs the configured backtest and writes `ledger.csv`, `summary.txt` and,
/// in sampled mode, `diagnostics.csv`.
pub fn run_backtest(config: &RunConfig) -> Result<Summary> {
    let p = prepare(config)?;
    let strategy = p.strategy.as_ref();
    let floor = p.floor.as_ref();
    let mut summary = Summary::default();
    summary.push("command", "backtest");
    summary.push("mode", mode_name(config.mode));
    summary.push("strategy", &strategy.meta().name);
    summary.push("days", p.market.len());
    summary.push("grid_points", p.grid.len());

    let (ledger, benchmark) = match config.mode {
        Mode::Fixed => {
            let w = fixed_point(config, &p)?;
            let ledger = cumulative_return(strategy, &w, &p.market, floor)?;
            let best = universal_run(strategy, &p.grid, &p.market, floor)?.best_log;
            summary.push(
                "w",
                w.coords()
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            );
            (ledger, best)
        }
        Mode::Exact => {
            let run = universal_run(strategy, &p.grid, &p.market, floor)?;
            (run.ledger, run.best_log)
        }
        Mode::Dynamic => {
            let schedule = DynamicSchedule::even(p.market.len(), config.intervals)?;
            let run = dynamic_universal_run(strategy, &p.grid, &p.market, &schedule, floor)?;
            summary.push("intervals", schedule.intervals().len());
            (run.ledger, run.benchmark_path)
        }
        Mode::Sampled => {
            let run = sampled(config, &p, Some(config.exact_cap))?;
            write_file(&config.out, "diagnostics.csv", &diagnostics_csv(&run))?;
            summary.push("seed", require_seed(config)?);
            (run.ledger, run.best_log)
        }
    };
    let gaps = regret(&ledger, &benchmark)?;
    write_file(
        &config.out,
        "ledger.csv",
        &ledger_csv(&ledger, &benchmark, &gaps),
    )?;
    let n = ledger.len();
    summary.push("final_wealth", ledger.final_wealth());
    summary.push("final_log_wealth", ledger.final_log_wealth());
    summary.push("normalized_log_return", ledger.log_normalized(n));
    summary.push("best_log_wealth", benchmark[n]);
    summary.push("regret", gaps.last().copied().unwrap_or(0.0));
    write_file(&config.out, "summary.txt", &summary.render())?;
    Ok(summary)
}

fn diagnostics_csv(run: &SampledRun) -> String {
    let mut out = String::from("day,chain,acceptance_rate,ess,tv_exact\n");
    for day in &run.diagnostics {
        let tv = day.tv_exact.map(|v| v.to_string()).unwrap_or_default();
        for c in &day.chains {
            let _ = writeln!(
                out,
                "{},{},{},{},{tv}",
                day.day, c.chain, c.acceptance_rate, c.ess
            );
        }
    }
    out
}

/// Writes `market.csv` from a synthetic generator.
pub fn gen_market(config: &RunConfig) -> Result<Summary> {
    if let MarketSource::Csv(_) = config.market {
        return Err(CliError::Config(
            "gen-market needs a generator: cover, constant or iid-lognormal".into(),
        ));
    }
    let series = load_prices(config)?;
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut buf = Vec::new();
    write_price_csv(&series, start, &mut buf)?;
    let text = String::from_utf8(buf).map_err(|e| CliError::Compute(e.to_string()))?;
    let path = write_file(&config.out, "market.csv", &text)?;
    let mut summary = Summary::default();
    summary.push("command", "gen-market");
    summary.push("instruments", series.len());
    summary.push("prices", series.first().map_or(0, PriceSeries::len));
    summary.push("path", path.display());
    write_file(&config.out, "summary.txt", &summary.render())?;
    Ok(summary)
}

/// Sampled run with exact TV per day, plus concavity, derivative and budget
/// reports. Fails with [`CliError::Threshold`] when any day's TV exceeds
/// `tv_threshold`; the files are written first.
pub fn diagnose(config: &RunConfig) -> Result<Summary> {
    let p = prepare(config)?;
    let seed = require_seed(config)?;
    if p.grid.len() > config.exact_cap {
        return Err(SamplerError::GridTooLarge {
            points: p.grid.len(),
            cap: config.exact_cap,
        }
        .into());
    }
    let run = sampled(config, &p, Some(usize::MAX))?;
    write_file(&config.out, "diagnostics.csv", &diagnostics_csv(&run))?;

    let strategy = p.strategy.as_ref();
    let meta = strategy.meta();
    let max_tv = run
        .diagnostics
        .iter()
        .filter_map(|d| d.tv_exact)
        .fold(0.0, f64::max);
    let max_rhat = run.diagnostics.iter().map(|d| d.rhat).fold(0.0, f64::max);
    let min_acceptance = run
        .diagnostics
        .iter()
        .flat_map(|d| &d.chains)
        .map(|c| c.acceptance_rate)
        .fold(1.0, f64::min);

    let mut summary = Summary::default();
    summary.push("command", "diagnose");
    summary.push("strategy", &meta.name);
    summary.push("days", p.market.len());
    summary.push("grid_points", p.grid.len());
    summary.push("seed", seed);
    summary.push("max_tv_exact", max_tv);
    summary.push("tv_threshold", config.tv_threshold);
    summary.push("max_rhat", max_rhat);
    summary.push("min_acceptance_rate", min_acceptance);

    let concavity = log_concavity_check(
        strategy,
        &p.market,
        p.floor.as_ref(),
        config.trials,
        seed,
        false,
    )?;
    summary.push("log_concave_eligible", concavity.eligible);
    if concavity.checked {
        summary.push("log_concavity_points", concavity.points);
        summary.push("log_concavity_max_eigenvalue", concavity.max_eigenvalue);
        summary.push("log_concavity_pass", concavity.passed(1e-6));
    }

    let derivative = derivative_bound_check(strategy, p.market.len(), config.trials, seed)?;
    summary.push("derivative_checked", !derivative.skipped);
    if !derivative.skipped {
        summary.push("derivative_max_ratio", derivative.max_ratio);
        summary.push("derivative_pass", derivative.passed());
    }

    match config.epsilon {
        Some(eps) if meta.derivative_bound.is_some() => {
            let t = p.market.len().saturating_sub(1);
            let tb = theoretical_budget(meta, t, eps, config.nu, config.kappa, config.confidence)?;
            summary.push("theory_day", t);
            summary.push("theory_delta", tb.delta_t);
            summary.push("theory_delta_prime", tb.delta_prime_t);
            summary.push("theory_sigma", tb.sigma);
            summary.push("theory_gamma_exponent", tb.gamma_exponent);
            summary.push("theory_tv_target", tb.gamma_t);
            summary.push("theory_walk_steps", tb.tau_prime);
            summary.push("theory_samples", tb.n_samples);
        }
        _ => summary.push("theory", "skipped"),
    }
    summary.push("tv_pass", max_tv <= config.tv_threshold);
    write_file(&config.out, "summary.txt", &summary.render())?;
    if max_tv > config.tv_threshold {
        return Err(CliError::Threshold(format!(
            "exact TV {max_tv} exceeds {}",
            config.tv_threshold
        )));
    }
    Ok(summary)
}

/// One row of the exact-versus-sampled comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub day: usize,
    pub component: usize,
    pub exact: f64,
    pub sampled: f64,
    /// Exact mean under the distribution the sampler targets.
    pub target_mean: f64,
}

impl CompareRow {
    pub fn deviation(&self) -> f64 {
        (self.sampled - self.exact).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Largest `|sampled - exact|` over days and components.
    pub max_deviation: f64,
    /// Root-mean-square of `sampled - target_mean`.
    pub rms_target_error: f64,
    pub summary: Summary,
}

/// Runs the sampler next to exact quadrature and writes `compare.csv`.
pub fn compare_modes(config: &RunConfig) -> Result<CompareReport> {
    let p = prepare(config)?;
    if p.grid.len() > config.exact_cap {
        return Err(SamplerError::GridTooLarge {
            points: p.grid.len(),
            cap: config.exact_cap,
        }
        .into());
    }
    let run = sampled(config, &p, Some(usize::MAX))?;
    let exact = run.exact_descriptions.as_ref().expect("exact requested");
    let target = run.target_descriptions.as_ref().expect("exact requested");
    let mut rows = Vec::new();
    for (day, sampled) in run.descriptions.iter().enumerate() {
        for (component, &s) in sampled.as_slice().iter().enumerate() {
            rows.push(CompareRow {
                day,
                component,
                exact: exact[day].as_slice()[component],
                sampled: s,
                target_mean: target[day].as_slice()[component],
            });
        }
    }
    let max_deviation = rows.iter().map(CompareRow::deviation).fold(0.0, f64::max);
    let rms_target_error = (rows
        .iter()
        .map(|r| (r.sampled - r.target_mean).powi(2))
        .sum::<f64>()
        / rows.len().max(1) as f64)
        .sqrt();

    let mut csv = String::from("day,component,exact,sampled,target_mean,deviation\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.day,
            r.component,
            r.exact,
            r.sampled,
            r.target_mean,
            r.deviation()
        );
    }
    write_file(&config.out, "compare.csv", &csv)?;

    let mut summary = Summary::default();
    summary.push("command", "compare");
    summary.push("strategy", &p.strategy.meta().name);
    summary.push("days", p.market.len());
    summary.push("grid_points", p.grid.len());
    summary.push("samples", config.samples);
    summary.push("seed", require_seed(config)?);
    summary.push("max_deviation", max_deviation);
    summary.push("rms_target_error", rms_target_error);
    write_file(&config.out, "summary.txt", &summary.render())?;
    Ok(CompareReport {
        rows,
        max_deviation,
        rms_target_error,
        summary,
    })
}
