//! The strategy interface `S_t(w)` and the five concrete strategies.
//!
//! Parameters live in a product of simplices. Derivatives are taken with
//! respect to the free coordinates of each block: the first `k - 1`
//! entries, with the last entry equal to one minus their sum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::market_model::{EnvironmentSnapshot, MarginSpec};
use crate::simplex_geom::{sample_uniform_point, scale_point, ParamSpace};

/// Tolerance for simplex membership of parameters and allocations.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not a valid allocation: {0}")]
    InvalidAllocation(String),
    #[error("not a valid parameter point: {0}")]
    InvalidParam(String),
    #[error("no environment available for day {day}")]
    InsufficientHistory { day: usize },
    #[error("invalid side information: {0}")]
    InvalidSideInfo(String),
    #[error("floor epsilon must lie in (0, 1), got {0}")]
    InvalidFloor(f64),
}

pub type Result<T> = std::result::Result<T, StrategyError>;

/// Fractions of wealth per instrument: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationVector(Vec<f64>);

impl AllocationVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(StrategyError::InvalidAllocation("empty".into()));
        }
        if let Some(bad) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(StrategyError::InvalidAllocation(format!(
                "component {bad} is negative or not finite"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(StrategyError::InvalidAllocation(format!(
                "components sum to {sum}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Daily return `S_t(w) . x_t`.
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// A point of `W_k^l`, stored block after block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    k: usize,
    coords: Vec<f64>,
}

impl ParamPoint {
    pub fn new(k: usize, coords: Vec<f64>) -> Result<Self> {
        let p = Self::unchecked(k, coords)?;
        p.check_domain()?;
        Ok(p)
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let k = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|b| b.len() != k) {
            return Err(StrategyError::InvalidParam(
                "blocks differ in length".into(),
            ));
        }
        Self::new(k, blocks.concat())
    }

    /// Shape-checked only; the point may lie off the simplex.
    pub fn unchecked(k: usize, coords: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(StrategyError::InvalidParam(format!("arity k = {k} < 2")));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(k) {
            return Err(StrategyError::InvalidParam(format!(
                "{} coordinates do not form blocks of {k}",
                coords.len()
            )));
        }
        Ok(Self { k, coords })
    }

    /// Rebuilds a point from free coordinates (`k - 1` per block).
    pub fn from_free(k: usize, free: &[f64]) -> Result<Self> {
        if k < 2 || free.is_empty() || !free.len().is_multiple_of(k - 1) {
            return Err(StrategyError::InvalidParam(
                "free coordinates do not form blocks".into(),
            ));
        }
        let mut coords = Vec::with_capacity(free.len() / (k - 1) * k);
        for block in free.chunks(k - 1) {
            coords.extend_from_slice(block);
            coords.push(1.0 - block.iter().sum::<f64>());
        }
        Ok(Self { k, coords })
    }

    pub fn uniform(k: usize, blocks: usize) -> Self {
        Self {
            k,
            coords: vec![1.0 / k as f64; k * blocks],
        }
    }

    fn check_domain(&self) -> Result<()> {
        for (b, block) in self.coords.chunks(self.k).enumerate() {
            if let Some(v) = block
                .iter()
                .find(|v| !(**v >= -SIMPLEX_TOL) || !v.is_finite())
            {
                return Err(StrategyError::InvalidParam(format!(
                    "block {b} has coordinate {v}"
                )));
            }
            let sum: f64 = block.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(StrategyError::InvalidParam(format!(
                    "block {b} sums to {sum}"
                )));
            }
        }
        Ok(())
    }

    pub fn in_domain(&self) -> bool {
        self.check_domain().is_ok()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of blocks `l`.
    pub fn blocks(&self) -> usize {
        self.coords.len() / self.k
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.coords[i * self.k..(i + 1) * self.k]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn free_coords(&self) -> Vec<f64> {
        self.coords
            .chunks(self.k)
            .flat_map(|b| b[..self.k - 1].iter().copied())
            .collect()
    }

    pub fn space(&self) -> ParamSpace {
        ParamSpace {
            k: self.k,
            blocks: self.blocks(),
        }
    }

    /// Moves free coordinate `axis` of `block` by `h`, compensating on the last entry.
    pub fn nudged(&self, block: usize, axis: usize, h: f64) -> ParamPoint {
        let mut coords = self.coords.clone();
        coords[block * self.k + axis] += h;
        coords[block * self.k + self.k - 1] -= h;
        ParamPoint { k: self.k, coords }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Static description of a strategy used by universalization and sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyMeta {
    pub name: String,
    pub k: usize,
    pub blocks: usize,
    pub m: usize,
    /// `c` with `|dS_ti/dw| <= c (t + 1)`; `None` for discontinuous allocations.
    pub derivative_bound: Option<f64>,
    /// All second partials of `S_t` vanish, so `log R_t` is concave.
    pub second_partials_zero: bool,
}

impl StrategyMeta {
    pub fn space(&self) -> ParamSpace {
        ParamSpace {
            k: self.k,
            blocks: self.blocks,
        }
    }
}

/// Mixing weight `epsilon` of the floor transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorSchedule {
    epsilon: f64,
}

impl FloorSchedule {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon < 1.0 {
            Ok(Self { epsilon })
        } else {
            Err(StrategyError::InvalidFloor(epsilon))
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Mass `epsilon / (2 (t+1)^2)` moved to the uniform allocation on day `t`.
    pub fn mix(&self, t: usize) -> f64 {
        let s = (t + 1) as f64;
        self.epsilon / (2.0 * s * s)
    }

    /// Lower bound `epsilon / (2 m (t+1)^2)` on every floored component.
    pub fn lower_bound(&self, t: usize, m: usize) -> f64 {
        self.mix(t) / m as f64
    }
}

/// `(1 - a) S_t(w) + a / m` with `a = epsilon / (2 (t+1)^2)`.
pub fn floor_transform(
    raw: &AllocationVector,
    t: usize,
    m: usize,
    floor: &FloorSchedule,
) -> AllocationVector {
    debug_assert_eq!(raw.len(), m);
    let a = floor.mix(t);
    let share = a / m as f64;
    AllocationVector(raw.0.iter().map(|s| (1.0 - a) * s + share).collect())
}

/// Long/short allocation functions of the moving-average rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaAllocation {
    /// `0` below zero, `1` otherwise.
    Step,
    /// Linear ramp of width `2/t` around zero.
    LinearStep,
    /// `(x + 1) / 2`.
    Line,
}

impl MaAllocation {
    pub fn eval(self, x: f64, t: usize) -> f64 {
        match self {
            MaAllocation::Step => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            // t x / 2 + 1/2 on [-1/t, 1/t]; constant 1/2 on day 0.
            MaAllocation::LinearStep => (t as f64 * x / 2.0 + 0.5).clamp(0.0, 1.0),
            MaAllocation::Line => (x + 1.0) / 2.0,
        }
    }
}

/// Long/short allocation functions of the support/resistance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrAllocation {
    Step,
    /// Ramps in `x` and `y` blended through the neutral plateau.
    Smoothed,
    Plane,
}

impl SrAllocation {
    /// `h(x, y)` with `x = p - r <= y = p - s`.
    pub fn eval(self, x: f64, y: f64, t: usize, margin: MarginSpec) -> f64 {
        let q = margin.neutral_long_fraction();
        match self {
            SrAllocation::Step => {
                if x <= y && y <= 0.0 {
                    0.0
                } else if x < 0.0 && 0.0 < y {
                    q
                } else {
                    1.0
                }
            }
            SrAllocation::Smoothed => {
                let a = MaAllocation::LinearStep.eval(x, t);
                let b = MaAllocation::LinearStep.eval(y, t);
                a + (1.0 - a) * b * q
            }
            SrAllocation::Plane => {
                let alpha = margin.alpha();
                (x + 1.0) * alpha / (2.0 * (alpha + 1.0)) + (y + 1.0) / (2.0 * (alpha + 1.0))
            }
        }
    }
}

/// Maps side information to weights over parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SideInfoModel {
    /// `f_i = v_i / sum(v)`.
    #[default]
    Proportional,
    /// All weight on the largest entry (lowest index on ties).
    OneHot,
}

impl SideInfoModel {
    pub fn weights(self, v: &[f64]) -> Result<Vec<f64>> {
        if v.is_empty() {
            return Err(StrategyError::InvalidSideInfo(
                "empty side information".into(),
            ));
        }
        match self {
            SideInfoModel::Proportional => {
                if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    return Err(StrategyError::InvalidSideInfo(
                        "proportional model needs nonnegative entries".into(),
                    ));
                }
                let total: f64 = v.iter().sum();
                if total <= 0.0 {
                    return Err(StrategyError::InvalidSideInfo("entries sum to zero".into()));
                }
                Ok(v.iter().map(|x| x / total).collect())
            }
            SideInfoModel::OneHot => {
                let mut best = 0;
                for (i, x) in v.iter().enumerate() {
                    if *x > v[best] {
                        best = i;
                    }
                }
                let mut f = vec![0.0; v.len()];
                f[best] = 1.0;
                Ok(f)
            }
        }
    }
}

fn expect_shape(w: &ParamPoint, k: usize, blocks: usize) -> Result<()> {
    if w.k() != k || w.blocks() != blocks {
        return Err(StrategyError::DimensionMismatch(format!(
            "parameter has shape {}x{}, strategy needs {blocks}x{k}",
            w.blocks(),
            w.k()
        )));
    }
    Ok(())
}

/// Constantly rebalanced portfolio: `CRP_t(w) = w`.
pub fn crp_describe(w: &ParamPoint, m: usize) -> Result<AllocationVector> {
    expect_shape(w, m, 1)?;
    AllocationVector::new(w.coords().to_vec())
}

/// `sum_j f_j(v_t) w_j` over the `l` portfolio blocks.
pub fn crpside_describe(
    w: &ParamPoint,
    side_info: &[f64],
    model: SideInfoModel,
) -> Result<AllocationVector> {
    let f = model.weights(side_info)?;
    if f.len() != w.blocks() {
        return Err(StrategyError::DimensionMismatch(format!(
            "side information has {} entries for {} blocks",
            f.len(),
            w.blocks()
        )));
    }
    let mut out = vec![0.0; w.k()];
    for (j, fj) in f.iter().enumerate() {
        for (o, wij) in out.iter_mut().zip(w.block(j)) {
            *o += fj * wij;
        }
    }
    AllocationVector::new(out)
}

/// Moving-average cross-over: `(g((w_F - w_S) . v_t), 1 - g(.))`.
pub fn ma_describe(
    w: &ParamPoint,
    env: &EnvironmentSnapshot,
    alloc: MaAllocation,
    t: usize,
) -> Result<AllocationVector> {
    let k = env.price_history.len();
    if k < 2 {
        return Err(StrategyError::InsufficientHistory { day: env.day });
    }
    expect_shape(w, k, 2)?;
    let arg = dot(w.block(0), &env.price_history) - dot(w.block(1), &env.price_history);
    let g = alloc.eval(arg, t);
    AllocationVector::new(vec![g, 1.0 - g])
}

/// Support/resistance breakout: `h(p - r, p - s)` long, the rest short.
pub fn sr_describe(
    w: &ParamPoint,
    env: &EnvironmentSnapshot,
    alloc: SrAllocation,
    margin: MarginSpec,
    t: usize,
) -> Result<AllocationVector> {
    let k = env.min_history.len();
    if k < 2 || env.max_history.len() != k {
        return Err(StrategyError::InsufficientHistory { day: env.day });
    }
    expect_shape(w, k, 1)?;
    let support = dot(w.coords(), &env.min_history);
    let resistance = dot(w.coords(), &env.max_history);
    let p = env.current_price;
    let h = alloc.eval(p - resistance, p - support, t, margin);
    AllocationVector::new(vec![h, 1.0 - h])
}

/// Indicator aggregation: component `i` is `w . v_i / sum_j w . v_j`.
pub fn ia_describe(w: &ParamPoint, env: &EnvironmentSnapshot) -> Result<AllocationVector> {
    let k = env.indicators.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(StrategyError::InsufficientHistory { day: env.day });
    }
    expect_shape(w, k, 1)?;
    let scores: Vec<f64> = env.indicators.iter().map(|v| dot(w.coords(), v)).collect();
    let total: f64 = scores.iter().sum();
    AllocationVector::new(scores.into_iter().map(|s| s / total).collect())
}

/// A parameterized strategy bound to the environments of one market.
pub trait Strategy: Send + Sync {
    fn meta(&self) -> &StrategyMeta;

    /// Investment description for market day `day`.
    fn describe(&self, day: usize, w: &ParamPoint) -> Result<AllocationVector>;

    /// Number of days with environments, if bounded.
    fn horizon(&self) -> Option<usize> {
        None
    }
}

/// `S_t(w)`, floored when a schedule is given.
pub fn describe_floored(
    strategy: &dyn Strategy,
    day: usize,
    w: &ParamPoint,
    floor: Option<&FloorSchedule>,
) -> Result<AllocationVector> {
    let raw = strategy.describe(day, w)?;
    Ok(match floor {
        Some(f) => floor_transform(&raw, day, raw.len(), f),
        None => raw,
    })
}

fn env_for(envs: &[EnvironmentSnapshot], day: usize) -> Result<&EnvironmentSnapshot> {
    envs.get(day)
        .ok_or(StrategyError::InsufficientHistory { day })
}

#[derive(Debug, Clone)]
pub struct Crp {
    meta: StrategyMeta,
}

impl Crp {
    pub fn new(m: usize) -> Self {
        Self {
            meta: StrategyMeta {
                name: "crp".into(),
                k: m,
                blocks: 1,
                m,
                derivative_bound: Some(1.0),
                second_partials_zero: true,
            },
        }
    }
}

impl Strategy for Crp {
    fn meta(&self) -> &StrategyMeta {
        &self.meta
    }

    fn describe(&self, _day: usize, w: &ParamPoint) -> Result<AllocationVector> {
        crp_describe(w, self.meta.m)
    }
}

#[derive(Debug, Clone)]
pub struct CrpSide {
    meta: StrategyMeta,
    model: SideInfoModel,
    envs: Vec<EnvironmentSnapshot>,
}

impl CrpSide {
    /// One portfolio block per side-information entry.
    pub fn new(m: usize, model: SideInfoModel, envs: Vec<EnvironmentSnapshot>) -> Result<Self> {
        let states = envs.first().map_or(0, |e| e.side_info.len());
        if states == 0 || envs.iter().any(|e| e.side_info.len() != states) {
            return Err(StrategyError::InvalidSideInfo(
                "every day needs side information of the same length".into(),
            ));
        }
        Ok(Self {
            meta: StrategyMeta {
                name: "crpside".into(),
                k: m,
                blocks: states,
                m,
                derivative_bound: Some(1.0),
                second_partials_zero: true,
            },
            model,
            envs,
        })
    }
}

impl Strategy for CrpSide {
    fn meta(&self) -> &StrategyMeta {
        &self.meta
    }

    fn describe(&self, day: usize, w: &ParamPoint) -> Result<AllocationVector> {
        expect_shape(w, self.meta.k, self.meta.blocks)?;
        crpside_describe(w, &env_for(&self.envs, day)?.side_info, self.model)
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.envs.len())
    }
}

#[derive(Debug, Clone)]
pub struct MovingAverage {
    meta: StrategyMeta,
    alloc: MaAllocation,
    envs: Vec<EnvironmentSnapshot>,
}

impl MovingAverage {
    pub fn new(k: usize, alloc: MaAllocation, envs: Vec<EnvironmentSnapshot>) -> Result<Self> {
        if let Some(e) = envs.iter().find(|e| e.price_history.len() != k) {
            return Err(StrategyError::InsufficientHistory { day: e.day });
        }
        let (bound, linear) = match alloc {
            MaAllocation::Step => (None, false),
            MaAllocation::LinearStep => (Some(0.5), false),
            MaAllocation::Line => (Some(0.5), true),
        };
        Ok(Self {
            meta: StrategyMeta {
                name: "ma".into(),
                k,
                blocks: 2,
                m: 2,
                derivative_bound: bound,
                second_partials_zero: linear,
            },
            alloc,
            envs,
        })
    }
}

impl Strategy for MovingAverage {
    fn meta(&self) -> &StrategyMeta {
        &self.meta
    }

    fn describe(&self, day: usize, w: &ParamPoint) -> Result<AllocationVector> {
        ma_describe(w, env_for(&self.envs, day)?, self.alloc, day)
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.envs.len())
    }
}

#[derive(Debug, Clone)]
pub struct SupportResistance {
    meta: StrategyMeta,
    alloc: SrAllocation,
    margin: MarginSpec,
    envs: Vec<EnvironmentSnapshot>,
}

impl SupportResistance {
    pub fn new(
        k: usize,
        alloc: SrAllocation,
        margin: MarginSpec,
        envs: Vec<EnvironmentSnapshot>,
    ) -> Result<Self> {
        if let Some(e) = envs
            .iter()
            .find(|e| e.min_history.len() != k || e.max_history.len() != k)
        {
            return Err(StrategyError::InsufficientHistory { day: e.day });
        }
        let (bound, linear) = match alloc {
            SrAllocation::Step => (None, false),
            SrAllocation::Smoothed => (Some(1.0), false),
            SrAllocation::Plane => (Some(0.5), true),
        };
        Ok(Self {
            meta: StrategyMeta {
                name: "sr".into(),
                k,
                blocks: 1,
                m: 2,
                derivative_bound: bound,
                second_partials_zero: linear,
            },
            alloc,
            margin,
            envs,
        })
    }
}

impl Strategy for SupportResistance {
    fn meta(&self) -> &StrategyMeta {
        &self.meta
    }

    fn describe(&self, day: usize, w: &ParamPoint) -> Result<AllocationVector> {
        sr_describe(w, env_for(&self.envs, day)?, self.alloc, self.margin, day)
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.envs.len())
    }
}

#[derive(Debug, Clone)]
pub struct IndicatorAggregation {
    meta: StrategyMeta,
    envs: Vec<EnvironmentSnapshot>,
}

impl IndicatorAggregation {
    pub fn new(k: usize, m: usize, envs: Vec<EnvironmentSnapshot>) -> Result<Self> {
        if let Some(e) = envs
            .iter()
            .find(|e| e.indicators.len() != m || e.indicators.iter().any(|r| r.len() != k))
        {
            return Err(StrategyError::DimensionMismatch(format!(
                "day {} indicators are not {m}x{k}",
                e.day
            )));
        }
        let (kf, mf) = (k as f64, m as f64);
        Ok(Self {
            meta: StrategyMeta {
                name: "ia".into(),
                k,
                blocks: 1,
                m,
                derivative_bound: Some(kf + mf * kf * kf),
                second_partials_zero: false,
            },
            envs,
        })
    }
}

impl Strategy for IndicatorAggregation {
    fn meta(&self) -> &StrategyMeta {
        &self.meta
    }

    fn describe(&self, day: usize, w: &ParamPoint) -> Result<AllocationVector> {
        ia_describe(w, env_for(&self.envs, day)?)
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.envs.len())
    }
}

/// Outcome of the finite-difference derivative check.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub declared: Option<f64>,
    /// Largest `|dS_ti/dw| / (t + 1)` observed.
    pub max_ratio: f64,
    pub worst_day: usize,
    pub evaluations: usize,
    pub violations: usize,
    /// Discontinuous allocations are not checked.
    pub skipped: bool,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.skipped || self.violations == 0
    }
}

/// Checks `|dS_ti/dw| <= c (t + 1)` by central differences at random interior points.
pub fn derivative_bound_check(
    strategy: &dyn Strategy,
    days: usize,
    trials: usize,
    seed: u64,
) -> Result<DerivativeReport> {
    const STEP: f64 = 1e-6;
    let meta = strategy.meta();
    let Some(c) = meta.derivative_bound else {
        return Ok(DerivativeReport {
            declared: None,
            max_ratio: f64::NAN,
            worst_day: 0,
            evaluations: 0,
            violations: 0,
            skipped: true,
        });
    };
    let space = meta.space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DerivativeReport {
        declared: Some(c),
        max_ratio: 0.0,
        worst_day: 0,
        evaluations: 0,
        violations: 0,
        skipped: false,
    };
    for _ in 0..trials {
        let (w, _) = scale_point(&sample_uniform_point(space, &mut rng), -0.05);
        for t in 0..days {
            for b in 0..space.blocks {
                for j in 0..space.k - 1 {
                    let up = strategy.describe(t, &w.nudged(b, j, STEP))?;
                    let down = strategy.describe(t, &w.nudged(b, j, -STEP))?;
                    for (u, d) in up.as_slice().iter().zip(down.as_slice()) {
                        let ratio = ((u - d) / (2.0 * STEP)).abs() / (t + 1) as f64;
                        report.evaluations += 1;
                        if ratio > report.max_ratio {
                            report.max_ratio = ratio;
                            report.worst_day = t;
                        }
                        if ratio > c * (1.0 + 1e-6) + 1e-7 {
                            report.violations += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}
