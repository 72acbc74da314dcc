#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unifolio_core::market_model::{
    iid_lognormal_prices, portfolio_scenario, trading_scenario, BreachPolicy, MarginSpec,
    MarketSeries, Provenance,
};
use unifolio_core::simplex_geom::{build_grid, GridSpec, ParamSpace};
use unifolio_core::strategies::{
    Crp, CrpSide, IndicatorAggregation, MaAllocation, MovingAverage, SideInfoModel, SrAllocation,
    Strategy, SupportResistance,
};

/// Coefficients in increasing degree.
pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn integrate_unit(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(i, c)| c / (i + 1) as f64).sum()
}

pub fn random_market(rng: &mut ChaCha8Rng, m: usize, n: usize) -> MarketSeries {
    let rows = (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(0.6..1.6)).collect())
        .collect();
    MarketSeries::new(
        (0..m).map(|i| format!("s{i}")).collect(),
        rows,
        Provenance::Synthetic("uniform factors".into()),
    )
    .unwrap()
}

/// One of the five strategies on a fresh random scenario, with its market and a grid of at most 100 points.
pub fn random_case(
    kind: usize,
    n: usize,
    seed: u64,
) -> (Box<dyn Strategy>, MarketSeries, GridSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = MarginSpec::new([0.25, 0.5, 1.0][rng.random_range(0..3)]).unwrap();
    match kind {
        0 => {
            let m = rng.random_range(2..=3);
            let market = random_market(&mut rng, m, n);
            let grid = build_grid(ParamSpace::new(m, 1).unwrap(), 0.125).unwrap();
            (Box::new(Crp::new(m)), market, grid)
        }
        1 => {
            let prices = iid_lognormal_prices(2, n + 3, 0.0, 0.1, seed).unwrap();
            let sc = portfolio_scenario(&prices, 2).unwrap();
            let market = sc.market.prefix(n);
            let s = CrpSide::new(2, SideInfoModel::Proportional, sc.environments).unwrap();
            let grid = build_grid(ParamSpace::new(2, 2).unwrap(), 0.125).unwrap();
            (Box::new(s), market, grid)
        }
        2 => {
            let prices = iid_lognormal_prices(1, n + 4, 0.0, 0.08, seed)
                .unwrap()
                .remove(0);
            let sc = trading_scenario(&prices, margin, 2, BreachPolicy::Clamp).unwrap();
            let alloc = [
                MaAllocation::Line,
                MaAllocation::LinearStep,
                MaAllocation::Step,
            ][rng.random_range(0..3)];
            let s = MovingAverage::new(2, alloc, sc.environments).unwrap();
            let grid = build_grid(ParamSpace::new(2, 2).unwrap(), 0.125).unwrap();
            (Box::new(s), sc.market.prefix(n), grid)
        }
        3 => {
            let prices = iid_lognormal_prices(1, n + 5, 0.0, 0.08, seed)
                .unwrap()
                .remove(0);
            let sc = trading_scenario(&prices, margin, 3, BreachPolicy::Clamp).unwrap();
            let alloc = [
                SrAllocation::Plane,
                SrAllocation::Smoothed,
                SrAllocation::Step,
            ][rng.random_range(0..3)];
            let s = SupportResistance::new(3, alloc, margin, sc.environments).unwrap();
            let grid = build_grid(ParamSpace::new(3, 1).unwrap(), 0.125).unwrap();
            (Box::new(s), sc.market.prefix(n), grid)
        }
        _ => {
            let m = rng.random_range(2..=3);
            let prices = iid_lognormal_prices(m, n + 4, 0.0, 0.1, seed).unwrap();
            let sc = portfolio_scenario(&prices, 3).unwrap();
            let s = IndicatorAggregation::new(3, m, sc.environments).unwrap();
            let grid = build_grid(ParamSpace::new(3, 1).unwrap(), 0.125).unwrap();
            (Box::new(s), sc.market.prefix(n), grid)
        }
    }
}
