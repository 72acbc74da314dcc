//! Grid-quadrature universalization, wealth ledgers, hindsight optima and regret.
//!
//! Every grid point carries the log of its cell volume and the log of its
//! cumulative return. Universal descriptions are ratios of weighted sums over
//! the grid, evaluated with max-subtraction.

use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::market_model::MarketSeries;
use crate::simplex_geom::{GeomError, GridSpec};
use crate::strategies::{
    describe_floored, AllocationVector, FloorSchedule, ParamPoint, Strategy, StrategyError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UniversalError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ledgers differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("daily return {value} on day {day} is not positive")]
    NonPositiveReturn { day: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, UniversalError>;

/// Daily return factors with their running log-wealth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WealthLedger {
    daily: Vec<f64>,
    /// `log_path[n] = log R_n`, with `log_path[0] = 0`.
    log_path: Vec<f64>,
}

impl WealthLedger {
    pub fn from_daily(daily: Vec<f64>) -> Result<Self> {
        let mut log_path = Vec::with_capacity(daily.len() + 1);
        log_path.push(0.0);
        let mut acc = 0.0;
        for (day, &r) in daily.iter().enumerate() {
            if !(r > 0.0) || !r.is_finite() {
                return Err(UniversalError::NonPositiveReturn { day, value: r });
            }
            acc += r.ln();
            log_path.push(acc);
        }
        Ok(Self { daily, log_path })
    }

    pub fn len(&self) -> usize {
        self.daily.len()
    }

    pub fn is_empty(&self) -> bool {
        self.daily.is_empty()
    }

    pub fn daily_returns(&self) -> &[f64] {
        &self.daily
    }

    /// `log R_n` for `n = 0..=len`.
    pub fn log_path(&self) -> &[f64] {
        if self.log_path.is_empty() {
            &[0.0]
        } else {
            &self.log_path
        }
    }

    pub fn log_wealth(&self, n: usize) -> f64 {
        self.log_path()[n]
    }

    pub fn cumulative(&self, n: usize) -> f64 {
        self.log_wealth(n).exp()
    }

    pub fn final_log_wealth(&self) -> f64 {
        *self.log_path().last().expect("log path is never empty")
    }

    pub fn final_wealth(&self) -> f64 {
        self.final_log_wealth().exp()
    }

    /// `(1/n) log R_n`; zero for `n = 0`.
    pub fn log_normalized(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.log_wealth(n) / n as f64
        }
    }
}

fn check_dimensions(strategy: &dyn Strategy, market: &MarketSeries) -> Result<()> {
    let meta = strategy.meta();
    if meta.m != market.m() {
        return Err(UniversalError::DimensionMismatch(format!(
            "strategy allocates over {} instruments, market has {}",
            meta.m,
            market.m()
        )));
    }
    if let Some(h) = strategy.horizon() {
        if h < market.len() {
            return Err(UniversalError::DimensionMismatch(format!(
                "strategy has environments for {h} days, market has {}",
                market.len()
            )));
        }
    }
    Ok(())
}

fn daily_return(desc: &AllocationVector, x: &[f64], day: usize) -> Result<f64> {
    let r = desc.dot(x);
    if r > 0.0 && r.is_finite() {
        Ok(r)
    } else {
        Err(UniversalError::NonPositiveReturn { day, value: r })
    }
}

/// `R_n(w) = prod_t S_t(w) . x_t`.
pub fn cumulative_return(
    strategy: &dyn Strategy,
    w: &ParamPoint,
    market: &MarketSeries,
    floor: Option<&FloorSchedule>,
) -> Result<WealthLedger> {
    check_dimensions(strategy, market)?;
    let daily = (0..market.len())
        .map(|t| {
            let desc = describe_floored(strategy, t, w, floor)?;
            daily_return(&desc, market.day(t), t)
        })
        .collect::<Result<Vec<_>>>()?;
    WealthLedger::from_daily(daily)
}

/// `log sum_g exp(a_g)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log of the cell-weighted grid mean of `exp(values)`.
pub fn grid_log_mean(log_cell: &[f64], values: &[f64]) -> f64 {
    let joint: Vec<f64> = log_cell.iter().zip(values).map(|(c, v)| c + v).collect();
    log_sum_exp(&joint) - log_sum_exp(log_cell)
}

/// Running cumulative log-returns of every grid point.
#[derive(Debug, Clone)]
pub struct GridWealth {
    points: Vec<ParamPoint>,
    log_cell: Vec<f64>,
    log_wealth: Vec<f64>,
    day: usize,
}

impl GridWealth {
    pub fn new(grid: &GridSpec) -> Self {
        Self {
            points: grid.points(),
            log_cell: grid.log_cell_weights(),
            log_wealth: vec![0.0; grid.len()],
            day: 0,
        }
    }

    /// Restarts the weighting without rewinding the day counter.
    pub fn reset_weights(&mut self) {
        self.log_wealth.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn day(&self) -> usize {
        self.day
    }

    pub fn points(&self) -> &[ParamPoint] {
        &self.points
    }

    pub fn log_cell(&self) -> &[f64] {
        &self.log_cell
    }

    /// `log R_t(w)` per grid point.
    pub fn log_wealth(&self) -> &[f64] {
        &self.log_wealth
    }

    /// `S_t(w)` for every grid point on the current day.
    pub fn describe_all(
        &self,
        strategy: &dyn Strategy,
        floor: Option<&FloorSchedule>,
    ) -> Result<Vec<AllocationVector>> {
        let day = self.day;
        self.points
            .par_iter()
            .map(|w| describe_floored(strategy, day, w, floor).map_err(UniversalError::from))
            .collect()
    }

    /// The universal description: descriptions averaged with weights `mu(w) R_t(w)`.
    pub fn weighted_average(&self, descriptions: &[AllocationVector]) -> Result<AllocationVector> {
        let m = descriptions.first().map_or(0, AllocationVector::len);
        let joint: Vec<f64> = self
            .log_cell
            .iter()
            .zip(&self.log_wealth)
            .map(|(c, v)| c + v)
            .collect();
        let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = vec![0.0; m];
        for (lj, desc) in joint.iter().zip(descriptions) {
            let weight = (lj - max).exp();
            for (a, s) in acc.iter_mut().zip(desc.as_slice()) {
                *a += weight * s;
            }
        }
        let total: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= total);
        Ok(AllocationVector::new(acc)?)
    }

    /// Adds `log(S_t(w) . x_t)` to every point and moves to the next day.
    pub fn advance(&mut self, descriptions: &[AllocationVector], x: &[f64]) -> Result<()> {
        let day = self.day;
        let logs = descriptions
            .par_iter()
            .map(|d| daily_return(d, x, day).map(f64::ln))
            .collect::<Result<Vec<_>>>()?;
        for (lw, l) in self.log_wealth.iter_mut().zip(logs) {
            *lw += l;
        }
        self.day += 1;
        Ok(())
    }

    /// Log of the cell-weighted mean of `R_t(w)`.
    pub fn log_mean_wealth(&self) -> f64 {
        grid_log_mean(&self.log_cell, &self.log_wealth)
    }

    /// Largest `log R_t(w)` and its lowest index.
    pub fn best(&self) -> (usize, f64) {
        let mut best = (0, self.log_wealth[0]);
        for (g, &v) in self.log_wealth.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (g, v);
            }
        }
        best
    }
}

/// Output of a universal run over a market.
#[derive(Debug, Clone)]
pub struct UniversalRun {
    pub ledger: WealthLedger,
    pub descriptions: Vec<AllocationVector>,
    /// `max_w log R_n(w)` over the grid for `n = 0..=len`.
    pub best_log: Vec<f64>,
    /// Final `log R_n(w)` per grid point.
    pub point_log_wealth: Vec<f64>,
    /// Log of the cell-weighted grid mean of the final `R_n(w)`.
    pub grid_log_mean: f64,
}

/// Universal description on day `t`, using the market's first `t` days.
pub fn universal_describe(
    strategy: &dyn Strategy,
    grid: &GridSpec,
    market: &MarketSeries,
    t: usize,
    floor: Option<&FloorSchedule>,
) -> Result<AllocationVector> {
    if t > market.len() {
        return Err(UniversalError::DimensionMismatch(format!(
            "day {t} beyond market of {} days",
            market.len()
        )));
    }
    check_dimensions(strategy, &market.prefix(t))?;
    let mut state = GridWealth::new(grid);
    for s in 0..t {
        let descs = state.describe_all(strategy, floor)?;
        state.advance(&descs, market.day(s))?;
    }
    let descs = state.describe_all(strategy, floor)?;
    state.weighted_average(&descs)
}

/// Invests with the universal description every day.
pub fn universal_run(
    strategy: &dyn Strategy,
    grid: &GridSpec,
    market: &MarketSeries,
    floor: Option<&FloorSchedule>,
) -> Result<UniversalRun> {
    check_dimensions(strategy, market)?;
    let mut state = GridWealth::new(grid);
    let mut daily = Vec::with_capacity(market.len());
    let mut descriptions = Vec::with_capacity(market.len());
    let mut best_log = vec![0.0];
    for t in 0..market.len() {
        let descs = state.describe_all(strategy, floor)?;
        let u = state.weighted_average(&descs)?;
        daily.push(daily_return(&u, market.day(t), t)?);
        descriptions.push(u);
        state.advance(&descs, market.day(t))?;
        best_log.push(state.best().1);
    }
    Ok(UniversalRun {
        ledger: WealthLedger::from_daily(daily)?,
        descriptions,
        best_log,
        grid_log_mean: state.log_mean_wealth(),
        point_log_wealth: state.log_wealth,
    })
}

/// Best grid point in hindsight.
#[derive(Debug, Clone, PartialEq)]
pub struct HindsightOptimum {
    pub index: usize,
    pub point: ParamPoint,
    pub log_value: f64,
    pub grid_len: usize,
}

impl HindsightOptimum {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// Maximizes `R_n(w)` over the grid; ties go to the lowest index.
pub fn hindsight_optimum(
    strategy: &dyn Strategy,
    grid: &GridSpec,
    market: &MarketSeries,
    floor: Option<&FloorSchedule>,
) -> Result<HindsightOptimum> {
    check_dimensions(strategy, market)?;
    let mut state = GridWealth::new(grid);
    for t in 0..market.len() {
        let descs = state.describe_all(strategy, floor)?;
        state.advance(&descs, market.day(t))?;
    }
    let (index, log_value) = state.best();
    Ok(HindsightOptimum {
        index,
        point: grid.point(index),
        log_value,
        grid_len: grid.len(),
    })
}

/// Per-day gap `(log B_n - log R_n(U)) / n` for `n = 1..=len`.
///
/// `benchmark_log` holds `log B_n` for `n = 0..=len`, as produced by
/// [`WealthLedger::log_path`] or [`UniversalRun::best_log`].
pub fn regret(universal: &WealthLedger, benchmark_log: &[f64]) -> Result<Vec<f64>> {
    let path = universal.log_path();
    if benchmark_log.len() != path.len() {
        return Err(UniversalError::LengthMismatch {
            left: path.len(),
            right: benchmark_log.len(),
        });
    }
    Ok((1..path.len())
        .map(|n| ((benchmark_log[n] - path[n]) / n as f64).max(0.0))
        .collect())
}

/// Consecutive day intervals covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicSchedule {
    intervals: Vec<Range<usize>>,
}

impl DynamicSchedule {
    pub fn new(intervals: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for (j, r) in intervals.iter().enumerate() {
            if r.start != next {
                return Err(UniversalError::Partition(format!(
                    "interval {j} starts at {} instead of {next}",
                    r.start
                )));
            }
            if r.is_empty() {
                return Err(UniversalError::Partition(format!("interval {j} is empty")));
            }
            next = r.end;
        }
        Ok(Self { intervals })
    }

    /// `count` intervals of near-equal length over `n` days.
    pub fn even(n: usize, count: usize) -> Result<Self> {
        if count == 0 || count > n {
            return Err(UniversalError::Partition(format!(
                "cannot split {n} days into {count} intervals"
            )));
        }
        let cuts: Vec<usize> = (0..=count).map(|j| j * n / count).collect();
        Self::new(cuts.windows(2).map(|c| c[0]..c[1]).collect())
    }

    pub fn intervals(&self) -> &[Range<usize>] {
        &self.intervals
    }

    pub fn total_len(&self) -> usize {
        self.intervals.last().map_or(0, |r| r.end)
    }
}

#[derive(Debug, Clone)]
pub struct DynamicRun {
    pub ledger: WealthLedger,
    pub descriptions: Vec<AllocationVector>,
    /// `sum_j max_w log R_{I_j}(w)`.
    pub benchmark_log: f64,
    /// Benchmark log-wealth after each day, `n = 0..=len`; the current
    /// interval contributes its running maximum.
    pub benchmark_path: Vec<f64>,
    /// Best grid index per interval.
    pub interval_best: Vec<usize>,
}

/// Universalization against a benchmark that may switch parameters between intervals.
pub fn dynamic_universal_run(
    strategy: &dyn Strategy,
    grid: &GridSpec,
    market: &MarketSeries,
    schedule: &DynamicSchedule,
    floor: Option<&FloorSchedule>,
) -> Result<DynamicRun> {
    check_dimensions(strategy, market)?;
    if schedule.total_len() != market.len() {
        return Err(UniversalError::Partition(format!(
            "schedule covers {} days, market has {}",
            schedule.total_len(),
            market.len()
        )));
    }
    let mut state = GridWealth::new(grid);
    let mut daily = Vec::with_capacity(market.len());
    let mut descriptions = Vec::with_capacity(market.len());
    let mut benchmark_log = 0.0;
    let mut interval_best = Vec::with_capacity(schedule.intervals().len());
    let mut benchmark_path = vec![0.0];
    for interval in schedule.intervals() {
        state.reset_weights();
        for t in interval.clone() {
            let descs = state.describe_all(strategy, floor)?;
            let u = state.weighted_average(&descs)?;
            daily.push(daily_return(&u, market.day(t), t)?);
            descriptions.push(u);
            state.advance(&descs, market.day(t))?;
            benchmark_path.push(benchmark_log + state.best().1);
        }
        let (g, v) = state.best();
        benchmark_log += v;
        interval_best.push(g);
    }
    Ok(DynamicRun {
        ledger: WealthLedger::from_daily(daily)?,
        descriptions,
        benchmark_log,
        benchmark_path,
        interval_best,
    })
}
