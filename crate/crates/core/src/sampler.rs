//! Metropolis sampling of the universal description on a grid.
//!
//! The walk proposes one of the `2 (k-1) l` axis neighbors uniformly, stays put
//! when the neighbor is off the grid, and accepts with `min(1, F(w')/F(w))`
//! where `F` is the cell weight times the cumulative return times the edge
//! damping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::market_model::MarketSeries;
use crate::simplex_geom::{sample_uniform_point, scale_point, GeomError, GridSpec};
use crate::strategies::{
    describe_floored, AllocationVector, FloorSchedule, ParamPoint, Strategy, StrategyError,
    StrategyMeta,
};
use crate::universalizer::{GridWealth, UniversalError, WealthLedger};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error(transparent)]
    Universal(#[from] UniversalError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("invalid damping: {0}")]
    InvalidDamping(String),
    #[error("invalid sampler budget: {0}")]
    InvalidBudget(String),
    #[error("budget of {requested} samples is below the minimum of {minimum}")]
    BudgetTooSmall { requested: usize, minimum: usize },
    #[error("exact mode needs at most {cap} grid points, grid has {points}")]
    GridTooLarge { points: usize, cap: usize },
    #[error("target weights must be finite: {0}")]
    InvalidTarget(String),
    #[error("strategy {0} declares no derivative bound")]
    NoDerivativeBound(String),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

/// Edge damping `prod_ij exp(Gamma min(w_ij - sigma, 0))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingSpec {
    gamma: f64,
    sigma: f64,
}

impl DampingSpec {
    pub fn new(gamma: f64, sigma: f64, k: usize) -> Result<Self> {
        if !(gamma > 2.0) || !gamma.is_finite() {
            return Err(SamplerError::InvalidDamping(format!(
                "Gamma = {gamma} must exceed 2"
            )));
        }
        if !(sigma > 0.0 && sigma < 1.0 / k as f64) {
            return Err(SamplerError::InvalidDamping(format!(
                "sigma = {sigma} must lie in (0, 1/{k})"
            )));
        }
        Ok(Self { gamma, sigma })
    }

    /// Half a grid cell wide, with `Gamma = min(10 / sigma, 1e6)`.
    pub fn for_grid(delta: f64, k: usize) -> Result<Self> {
        let sigma = (delta / 2.0).min(0.5 / k as f64);
        Self::new((10.0 / sigma).min(1e6), sigma, k)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_factor(&self, w: &ParamPoint) -> f64 {
        w.coords()
            .iter()
            .map(|&x| self.gamma * (x - self.sigma).min(0.0))
            .sum()
    }
}

pub fn damping_factor(w: &ParamPoint, spec: &DampingSpec) -> f64 {
    spec.log_factor(w).exp()
}

/// Unnormalized log-weights over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    log_weights: Vec<f64>,
    log_normalizer: f64,
}

impl TargetDistribution {
    pub fn from_log_weights(log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(SamplerError::InvalidTarget("no grid points".into()));
        }
        if let Some(bad) = log_weights.iter().find(|v| !v.is_finite()) {
            return Err(SamplerError::InvalidTarget(format!("log weight {bad}")));
        }
        let log_normalizer = crate::universalizer::log_sum_exp(&log_weights);
        Ok(Self {
            log_weights,
            log_normalizer,
        })
    }

    /// `log mu(w) + log R_t(w) + log damping(w)` for the current day of `wealth`.
    pub fn for_day(wealth: &GridWealth, damping: Option<&DampingSpec>) -> Result<Self> {
        let weights = wealth
            .log_cell()
            .iter()
            .zip(wealth.log_wealth())
            .zip(wealth.points())
            .map(|((c, r), w)| c + r + damping.map_or(0.0, |d| d.log_factor(w)))
            .collect();
        Self::from_log_weights(weights)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .map(|w| (w - self.log_normalizer).exp())
            .collect()
    }

    /// One-step probability of the walk moving from `u` to `v`.
    pub fn transition_probability(&self, walk: &Walk, u: usize, v: usize) -> f64 {
        let slots = walk.slots as f64;
        let moves = walk.row(u).iter().filter(|&&n| n != NONE);
        if u == v {
            let leave: f64 = moves
                .map(|&n| {
                    (self.log_weights[n as usize] - self.log_weights[u])
                        .exp()
                        .min(1.0)
                })
                .sum();
            1.0 - leave / slots
        } else {
            walk.row(u)
                .iter()
                .filter(|&&n| n as usize == v)
                .map(|_| (self.log_weights[v] - self.log_weights[u]).exp().min(1.0) / slots)
                .sum()
        }
    }
}

const NONE: u32 = u32::MAX;

/// Dense neighbor table of a grid.
#[derive(Debug, Clone)]
pub struct Walk {
    slots: usize,
    table: Vec<u32>,
}

impl Walk {
    pub fn new(grid: &GridSpec) -> Self {
        let slots = grid.space().neighbor_slots();
        let table = (0..grid.len())
            .into_par_iter()
            .flat_map_iter(|g| {
                (0..slots).map(move |s| grid.neighbor(g, s).map_or(NONE, |n| n as u32))
            })
            .collect();
        Self { slots, table }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.table.len() / self.slots
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn row(&self, g: usize) -> &[u32] {
        &self.table[g * self.slots..(g + 1) * self.slots]
    }
}

/// Random stream for `(seed, day, chain)`.
pub fn chain_rng(seed: u64, day: usize, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((day as u64) << 32) | chain as u64);
    rng
}

/// Position and generator of one Metropolis chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub position: usize,
    rng: ChaCha8Rng,
    pub steps: u64,
    pub accepted: u64,
}

impl ChainState {
    pub fn new(position: usize, rng: ChaCha8Rng) -> Self {
        Self {
            position,
            rng,
            steps: 0,
            accepted: 0,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

/// One Metropolis move.
#[inline]
pub fn metropolis_step(chain: &mut ChainState, walk: &Walk, target: &TargetDistribution) {
    chain.steps += 1;
    let slot = chain.rng.random_range(0..walk.slots);
    let next = walk.table[chain.position * walk.slots + slot];
    if next == NONE {
        return;
    }
    let next = next as usize;
    let log_ratio = target.log_weights[next] - target.log_weights[chain.position];
    if log_ratio >= 0.0 || chain.rng.random::<f64>().ln() < log_ratio {
        chain.position = next;
        chain.accepted += 1;
    }
}

/// Transition table of one day's walk: neighbor and acceptance probability
/// per proposal slot.
#[derive(Debug, Clone)]
pub struct Kernel {
    slots: usize,
    next: Vec<u32>,
    accept: Vec<f64>,
}

impl Kernel {
    pub fn new(walk: &Walk, target: &TargetDistribution) -> Self {
        let lw = &target.log_weights;
        let accept = walk
            .table
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                if n == NONE {
                    0.0
                } else {
                    (lw[n as usize] - lw[i / walk.slots]).exp().min(1.0)
                }
            })
            .collect();
        Self {
            slots: walk.slots,
            next: walk.table.clone(),
            accept,
        }
    }
}

/// [`metropolis_step`] driven by a precomputed [`Kernel`].
#[inline]
pub fn kernel_step(chain: &mut ChainState, kernel: &Kernel) {
    chain.steps += 1;
    let i = chain.position * kernel.slots + chain.rng.random_range(0..kernel.slots);
    let next = kernel.next[i];
    if next == NONE {
        return;
    }
    let a = kernel.accept[i];
    if a >= 1.0 || chain.rng.random::<f64>() < a {
        chain.position = next as usize;
        chain.accepted += 1;
    }
}

/// Practical sampling budget per day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerBudget {
    /// Samples pooled across chains.
    pub n_samples: usize,
    /// Steps discarded by each chain before sampling.
    pub burn_in: usize,
    /// Steps between recorded samples.
    pub thin: usize,
    pub chains: usize,
    pub min_samples: usize,
}

impl Default for SamplerBudget {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            burn_in: 100_000,
            thin: 1,
            chains: 8,
            min_samples: 1,
        }
    }
}

impl SamplerBudget {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.thin == 0 {
            return Err(SamplerError::InvalidBudget(
                "chains and thin must be positive".into(),
            ));
        }
        if self.n_samples < self.min_samples.max(1) {
            return Err(SamplerError::BudgetTooSmall {
                requested: self.n_samples,
                minimum: self.min_samples.max(1),
            });
        }
        Ok(())
    }

    /// Samples drawn by chain `c`; the counts add up to `n_samples`.
    pub fn samples_for_chain(&self, c: usize) -> usize {
        self.n_samples / self.chains + usize::from(c < self.n_samples % self.chains)
    }
}

/// Per-chain diagnostics for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub acceptance_rate: f64,
    /// Effective size of the first-coordinate trace.
    pub ess: f64,
    pub samples: usize,
}

/// Pooled samples of one day.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    /// Visit counts per grid index.
    pub counts: Vec<u64>,
    /// Sampled grid indices, chain after chain.
    pub samples: Vec<usize>,
    pub chains: Vec<ChainDiagnostics>,
    /// Split `R-hat` of the first-coordinate trace across chains.
    pub rhat: f64,
}

/// Runs the chains from `starts` and pools their samples.
pub fn run_chains(
    grid: &GridSpec,
    walk: &Walk,
    target: &TargetDistribution,
    budget: &SamplerBudget,
    starts: &[usize],
    seed: u64,
    day: usize,
) -> Result<SampleOutcome> {
    budget.validate()?;
    if starts.len() != budget.chains {
        return Err(SamplerError::InvalidBudget(format!(
            "{} start positions for {} chains",
            starts.len(),
            budget.chains
        )));
    }
    let kernel = Kernel::new(walk, target);
    let per_chain: Vec<(Vec<usize>, f64)> = starts
        .par_iter()
        .enumerate()
        .map(|(c, &start)| {
            let mut chain = ChainState::new(start, chain_rng(seed, day, c));
            for _ in 0..budget.burn_in {
                kernel_step(&mut chain, &kernel);
            }
            chain.steps = 0;
            chain.accepted = 0;
            let n = budget.samples_for_chain(c);
            let mut trace = Vec::with_capacity(n);
            for _ in 0..n {
                for _ in 0..budget.thin {
                    kernel_step(&mut chain, &kernel);
                }
                trace.push(chain.position);
            }
            (trace, chain.acceptance_rate())
        })
        .collect();
    let mut counts = vec![0u64; grid.len()];
    let mut samples = Vec::with_capacity(budget.n_samples);
    let mut chains = Vec::with_capacity(per_chain.len());
    let mut traces = Vec::with_capacity(per_chain.len());
    for (c, (trace, acceptance_rate)) in per_chain.into_iter().enumerate() {
        let coord: Vec<f64> = trace.iter().map(|&g| grid.point(g).coords()[0]).collect();
        chains.push(ChainDiagnostics {
            chain: c,
            acceptance_rate,
            ess: ess(&coord),
            samples: trace.len(),
        });
        for &g in &trace {
            counts[g] += 1;
        }
        samples.extend_from_slice(&trace);
        traces.push(coord);
    }
    Ok(SampleOutcome {
        counts,
        samples,
        chains,
        rhat: split_rhat(&traces),
    })
}

/// `sum_g counts_g S(g) / sum_g counts_g`, visiting grid indices in order.
pub fn estimate_from_counts<F>(counts: &[u64], mut describe: F) -> Result<AllocationVector>
where
    F: FnMut(usize) -> Result<AllocationVector>,
{
    let total: u64 = counts.iter().sum();
    let mut acc: Vec<f64> = Vec::new();
    for (g, &c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        let d = describe(g)?;
        if acc.is_empty() {
            acc = vec![0.0; d.len()];
        }
        for (a, s) in acc.iter_mut().zip(d.as_slice()) {
            *a += c as f64 * s;
        }
    }
    let sum: f64 = acc.iter().sum();
    if total == 0 || sum <= 0.0 {
        return Err(SamplerError::InvalidBudget("no samples drawn".into()));
    }
    acc.iter_mut().for_each(|a| *a /= sum);
    Ok(AllocationVector::new(acc)?)
}

/// `sum_g pi(g) S(g)` under the normalized target.
pub fn stationary_mean(
    target: &TargetDistribution,
    descriptions: &[AllocationVector],
) -> Result<AllocationVector> {
    let m = descriptions.first().map_or(0, AllocationVector::len);
    let mut acc = vec![0.0; m];
    for (p, d) in target.probabilities().iter().zip(descriptions) {
        for (a, s) in acc.iter_mut().zip(d.as_slice()) {
            *a += p * s;
        }
    }
    let total: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(AllocationVector::new(acc)?)
}

/// Sample-average estimate of the universal description on `day`.
#[allow(clippy::too_many_arguments)]
pub fn sample_descriptions(
    strategy: &dyn Strategy,
    day: usize,
    grid: &GridSpec,
    target: &TargetDistribution,
    budget: &SamplerBudget,
    starts: &[usize],
    seed: u64,
    floor: Option<&FloorSchedule>,
) -> Result<(AllocationVector, SampleOutcome)> {
    let walk = Walk::new(grid);
    let outcome = run_chains(grid, &walk, target, budget, starts, seed, day)?;
    let estimate = estimate_from_counts(&outcome.counts, |g| {
        Ok(describe_floored(strategy, day, &grid.point(g), floor)?)
    })?;
    Ok((estimate, outcome))
}

/// Chain starts drawn without replacement from the pooled samples of the two
/// previous days; chains left over start uniformly on the grid.
pub fn warm_start(
    previous: &[usize],
    before_previous: &[usize],
    chains: usize,
    grid_len: usize,
    seed: u64,
    day: usize,
) -> (Vec<usize>, usize) {
    let mut rng = chain_rng(seed ^ 0x5741_524d, day, usize::from(u16::MAX));
    let mut pool: Vec<usize> = previous.iter().chain(before_previous).copied().collect();
    let mut starts = Vec::with_capacity(chains);
    let mut fallback = 0;
    for _ in 0..chains {
        if pool.is_empty() {
            starts.push(rng.random_range(0..grid_len));
            fallback += 1;
        } else {
            let i = rng.random_range(0..pool.len());
            starts.push(pool.swap_remove(i));
        }
    }
    if fallback > 0 && day > 0 {
        log::info!("day {day}: {fallback} of {chains} chains started uniformly");
    }
    (starts, fallback)
}

/// `ceil(8 m^2 (t+1)^8 / eps^4 * ln(2 m (t+1)^2 / delta))`.
pub fn required_samples(m: usize, t: usize, epsilon: f64, delta: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(SamplerError::InvalidBudget(
            "epsilon and delta must lie in (0, 1)".into(),
        ));
    }
    let (m, s) = (m as f64, (t + 1) as f64);
    let n = 8.0 * m * m * s.powi(8) / epsilon.powi(4) * (2.0 * m * s * s / delta).ln();
    Ok(n.ceil() as u64)
}

/// Total-variation target `eps^2 / (4 m (t+1)^4)`.
pub fn gamma_t(m: usize, t: usize, epsilon: f64) -> f64 {
    epsilon * epsilon / (4.0 * m as f64 * ((t + 1) as f64).powi(4))
}

/// Worst-case sampler parameters. These are reported alongside runs and are
/// not used as runtime defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoreticalBudget {
    pub delta_t: f64,
    pub delta_prime_t: f64,
    pub sigma: f64,
    pub gamma_exponent: f64,
    pub gamma_t: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub n_samples: u64,
}

/// Grid spacing, damping and walk lengths for day `t` with `c' = 2c/eps`.
///
/// Day `t` enters the polynomial factors as `max(t, 1)`.
pub fn theoretical_budget(
    meta: &StrategyMeta,
    t: usize,
    epsilon: f64,
    nu: f64,
    kappa: f64,
    confidence: f64,
) -> Result<TheoreticalBudget> {
    let c = meta
        .derivative_bound
        .ok_or_else(|| SamplerError::NoDerivativeBound(meta.name.clone()))?;
    if !(nu > 0.0) || !(kappa > 0.0) {
        return Err(SamplerError::InvalidBudget(
            "nu and kappa must be positive".into(),
        ));
    }
    let n_samples = required_samples(meta.m, t, epsilon, confidence)?;
    let (k, l, m) = (meta.k as f64, meta.blocks as f64, meta.m as f64);
    let tt = t.max(1) as f64;
    let c_prime = 2.0 * c / epsilon;
    let delta_of = |v: f64| v / (3.0 * c_prime * m * tt.powi(4) * k * l);
    let g = gamma_t(meta.m, t, epsilon);
    let sigma = delta_of(g / 2.0) / k;
    let gamma_exponent = 1.0 / sigma;
    let tau = k.powi(7) * l.powi(6) * m.powi(6) * tt.powi(24) / (kappa * nu * nu * epsilon.powi(4));
    Ok(TheoreticalBudget {
        delta_t: delta_of(nu),
        delta_prime_t: delta_of(nu / gamma_exponent),
        sigma,
        gamma_exponent,
        gamma_t: g,
        tau,
        tau_prime: tau * (k * l + t as f64),
        n_samples,
    })
}

/// Total variation between a visit histogram and the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvReport {
    /// `(1/2) sum |pi - p|`.
    pub tv: f64,
    /// `2 (sum |pi - p|)^2`, the form used by mixing-time bounds.
    pub squared_l1_bound_form: f64,
}

impl TvReport {
    fn from_tv(tv: f64) -> Self {
        Self {
            tv,
            squared_l1_bound_form: 2.0 * (2.0 * tv).powi(2),
        }
    }
}

/// Exact TV by enumerating the target; refused above `cap` grid points.
pub fn tv_diagnostic(counts: &[u64], target: &TargetDistribution, cap: usize) -> Result<TvReport> {
    if target.len() > cap {
        return Err(SamplerError::GridTooLarge {
            points: target.len(),
            cap,
        });
    }
    if counts.len() != target.len() {
        return Err(SamplerError::InvalidTarget(format!(
            "{} histogram bins for {} grid points",
            counts.len(),
            target.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    let pi = target.probabilities();
    let l1: f64 = counts
        .iter()
        .zip(&pi)
        .map(|(&c, p)| (c as f64 / total.max(1) as f64 - p).abs())
        .sum();
    Ok(TvReport::from_tv((l1 / 2.0).min(1.0)))
}

/// TV between two visit histograms.
pub fn tv_between(a: &[u64], b: &[u64]) -> f64 {
    let (ta, tb) = (
        a.iter().sum::<u64>().max(1) as f64,
        b.iter().sum::<u64>().max(1) as f64,
    );
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / ta - y as f64 / tb).abs())
        .sum::<f64>()
        / 2.0
}

/// Effective sample size with Geyer's initial monotone sequence.
pub fn ess(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return n as f64;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let var = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        lag += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Split `R-hat` over chains of equal-ish length; `1.0` when undefined.
pub fn split_rhat(traces: &[Vec<f64>]) -> f64 {
    let half = traces.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 2 {
        return 1.0;
    }
    let pieces: Vec<&[f64]> = traces
        .iter()
        .flat_map(|t| [&t[..half], &t[half..2 * half]])
        .collect();
    let n = half as f64;
    let means: Vec<f64> = pieces.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let within: f64 = pieces
        .iter()
        .zip(&means)
        .map(|(p, m)| p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / pieces.len() as f64;
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let between =
        n * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() as f64 - 1.0);
    if within <= 0.0 {
        return 1.0;
    }
    (((n - 1.0) / n * within + between / n) / within).sqrt()
}

/// Outcome of the numeric concavity check of `log R_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityReport {
    /// The strategy declares vanishing second partials.
    pub eligible: bool,
    pub checked: bool,
    pub points: usize,
    pub max_eigenvalue: f64,
}

impl ConcavityReport {
    pub fn passed(&self, tol: f64) -> bool {
        !self.checked || self.max_eigenvalue <= tol
    }
}

/// Largest Hessian eigenvalue of `w -> log R_n(w)` at random interior points.
///
/// Ineligible strategies are skipped unless `force` is set.
pub fn log_concavity_check(
    strategy: &dyn Strategy,
    market: &MarketSeries,
    floor: Option<&FloorSchedule>,
    trials: usize,
    seed: u64,
    force: bool,
) -> Result<ConcavityReport> {
    const STEP: f64 = 1e-4;
    let meta = strategy.meta();
    let eligible = meta.second_partials_zero;
    let mut report = ConcavityReport {
        eligible,
        checked: eligible || force,
        points: 0,
        max_eigenvalue: f64::NEG_INFINITY,
    };
    if !report.checked {
        return Ok(report);
    }
    let space = meta.space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = space.free_dim();
    for _ in 0..trials {
        let (w, _) = scale_point(&sample_uniform_point(space, &mut rng), -0.1);
        let free = w.free_coords();
        let returns = |offsets: &[(usize, f64)]| -> Result<Vec<f64>> {
            let mut f = free.clone();
            for &(a, h) in offsets {
                f[a] += h;
            }
            let p = ParamPoint::from_free(space.k, &f)?;
            (0..market.len())
                .map(|t| Ok(describe_floored(strategy, t, &p, floor)?.dot(market.day(t))))
                .collect()
        };
        // Sum over days of ln(a/b) via ln_1p of the relative difference.
        let log_ratio = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| ((x - y) / y).ln_1p()).sum()
        };
        let mut hess = nalgebra::DMatrix::<f64>::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let pp = returns(&[(a, STEP), (b, STEP)])?;
                let pm = returns(&[(a, STEP), (b, -STEP)])?;
                let mp = returns(&[(a, -STEP), (b, STEP)])?;
                let mm = returns(&[(a, -STEP), (b, -STEP)])?;
                let value = (log_ratio(&pp, &pm) - log_ratio(&mp, &mm)) / (4.0 * STEP * STEP);
                hess[(a, b)] = value;
                hess[(b, a)] = value;
            }
        }
        let top = nalgebra::SymmetricEigen::new(hess)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        report.max_eigenvalue = report.max_eigenvalue.max(top);
        report.points += 1;
    }
    Ok(report)
}

/// Per-day diagnostics of a sampled run.
#[derive(Debug, Clone, PartialEq)]
pub struct DayDiagnostics {
    pub day: usize,
    pub chains: Vec<ChainDiagnostics>,
    pub rhat: f64,
    pub tv_exact: Option<f64>,
    /// Chains that started uniformly for lack of pooled samples.
    pub uniform_starts: usize,
}

/// Settings of a sampled universal run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledRunConfig {
    pub budget: SamplerBudget,
    pub damping: Option<DampingSpec>,
    pub seed: u64,
    /// Also compute exact descriptions and exact TV when the grid has at most this many points.
    pub exact_cap: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SampledRun {
    pub ledger: WealthLedger,
    pub descriptions: Vec<AllocationVector>,
    /// Exact universal descriptions, when requested.
    pub exact_descriptions: Option<Vec<AllocationVector>>,
    /// Exact means of the descriptions under the sampled (damped) target, when requested.
    pub target_descriptions: Option<Vec<AllocationVector>>,
    pub diagnostics: Vec<DayDiagnostics>,
    /// `max_w log R_n(w)` over the grid for `n = 0..=len`.
    pub best_log: Vec<f64>,
}

/// Invests each day with the sampled estimate of the universal description.
pub fn sampled_universal_run(
    strategy: &dyn Strategy,
    grid: &GridSpec,
    market: &MarketSeries,
    floor: Option<&FloorSchedule>,
    config: &SampledRunConfig,
) -> Result<SampledRun> {
    config.budget.validate()?;
    if strategy.meta().m != market.m() {
        return Err(UniversalError::DimensionMismatch(format!(
            "strategy allocates over {} instruments, market has {}",
            strategy.meta().m,
            market.m()
        ))
        .into());
    }
    let exact = config.exact_cap.is_some_and(|cap| grid.len() <= cap);
    let walk = Walk::new(grid);
    let mut state = GridWealth::new(grid);
    let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut daily = Vec::with_capacity(market.len());
    let mut descriptions = Vec::with_capacity(market.len());
    let mut exact_descriptions = Vec::new();
    let mut target_descriptions = Vec::new();
    let mut diagnostics = Vec::with_capacity(market.len());
    let mut best_log = vec![0.0];
    for t in 0..market.len() {
        let descs = state.describe_all(strategy, floor)?;
        let target = TargetDistribution::for_day(&state, config.damping.as_ref())?;
        let (starts, uniform_starts) = warm_start(
            &pools[0],
            &pools[1],
            config.budget.chains,
            grid.len(),
            config.seed,
            t,
        );
        let outcome = run_chains(
            grid,
            &walk,
            &target,
            &config.budget,
            &starts,
            config.seed,
            t,
        )?;
        let estimate = estimate_from_counts(&outcome.counts, |g| Ok(descs[g].clone()))?;
        let tv_exact = if exact {
            exact_descriptions.push(state.weighted_average(&descs)?);
            target_descriptions.push(stationary_mean(&target, &descs)?);
            Some(tv_diagnostic(&outcome.counts, &target, usize::MAX)?.tv)
        } else {
            None
        };
        let r = estimate.dot(market.day(t));
        if !(r > 0.0) {
            return Err(UniversalError::NonPositiveReturn { day: t, value: r }.into());
        }
        daily.push(r);
        descriptions.push(estimate);
        diagnostics.push(DayDiagnostics {
            day: t,
            chains: outcome.chains,
            rhat: outcome.rhat,
            tv_exact,
            uniform_starts,
        });
        pools.swap(0, 1);
        pools[0] = outcome.samples;
        state.advance(&descs, market.day(t))?;
        best_log.push(state.best().1);
    }
    Ok(SampledRun {
        ledger: WealthLedger::from_daily(daily)?,
        descriptions,
        exact_descriptions: exact.then_some(exact_descriptions),
        target_descriptions: exact.then_some(target_descriptions),
        diagnostics,
        best_log,
    })
}
