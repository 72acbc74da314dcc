//! Price and return series, the short-position margin rule, normalized
//! environment snapshots, CSV ingestion and synthetic market generators.
//!
//! Day indexing: return vector `t` spans prices `t -> t + 1`. Snapshots for
//! day `t` only ever read prices with index `<= t`, so a strategy evaluated
//! on day `t` never sees the price move it is betting on.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error(
        "price factor {x} breaches margin limit 1 + alpha = {limit}{}",
        day.map(|d| format!(" on day {d}")).unwrap_or_default()
    )]
    MarginBreach {
        day: Option<usize>,
        x: f64,
        limit: f64,
    },
    #[error("margin requirement must lie in (0, 1], got {0}")]
    InvalidMargin(f64),
    #[error("insufficient history: need {needed} prices, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("non-positive price {value} at row {row}, column {column}")]
    NonPositivePrice {
        row: usize,
        column: usize,
        value: f64,
    },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

pub type Result<T> = std::result::Result<T, MarketError>;

/// Daily prices of one instrument, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    ticker: String,
    prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(ticker: impl Into<String>, prices: Vec<f64>) -> Result<Self> {
        for (row, &p) in prices.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(MarketError::NonPositivePrice {
                    row,
                    column: 0,
                    value: p,
                });
            }
        }
        Ok(Self {
            ticker: ticker.into(),
            prices,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Price factors `p[t+1] / p[t]`.
    pub fn factors(&self) -> Vec<f64> {
        self.prices.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Margin requirement `alpha` for short positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSpec {
    alpha: f64,
}

impl MarginSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha <= 1.0 {
            Ok(Self { alpha })
        } else {
            Err(MarketError::InvalidMargin(alpha))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Largest admissible daily price factor (exclusive).
    pub fn limit(&self) -> f64 {
        1.0 + self.alpha
    }

    /// Long fraction of the allocation whose return is identically 1.
    pub fn neutral_long_fraction(&self) -> f64 {
        1.0 / (self.alpha + 1.0)
    }
}

/// What to do when a daily factor reaches `1 + alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BreachPolicy {
    #[default]
    Reject,
    /// Clamp the factor to `(1 + alpha)(1 - 1e-9)` and log a warning.
    Clamp,
}

const CLAMP_SHRINK: f64 = 1.0 - 1e-9;

/// Value factor of a rebalanced short position when the price moves by `x`.
pub fn short_return(x: f64, margin: MarginSpec) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(MarketError::InvalidSeries(format!(
            "price factor must be positive, got {x}"
        )));
    }
    if x >= margin.limit() {
        return Err(MarketError::MarginBreach {
            day: None,
            x,
            limit: margin.limit(),
        });
    }
    Ok(1.0 + (1.0 - x) / margin.alpha())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Ingested(String),
    Synthetic(String),
    Derived(String),
}

/// Day-indexed return vectors for `m` instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    labels: Vec<String>,
    returns: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl MarketSeries {
    pub fn new(
        labels: Vec<String>,
        returns: Vec<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(MarketError::DimensionMismatch(
                "a market needs at least one instrument".into(),
            ));
        }
        for (t, x) in returns.iter().enumerate() {
            if x.len() != m {
                return Err(MarketError::DimensionMismatch(format!(
                    "day {t} has {} factors, expected {m}",
                    x.len()
                )));
            }
            if let Some(&bad) = x.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(MarketError::InvalidSeries(format!(
                    "day {t} has non-positive factor {bad}"
                )));
            }
        }
        Ok(Self {
            labels,
            returns,
            provenance,
        })
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn day(&self, t: usize) -> &[f64] {
        &self.returns[t]
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The first `n` days.
    pub fn prefix(&self, n: usize) -> MarketSeries {
        MarketSeries {
            labels: self.labels.clone(),
            returns: self.returns[..n.min(self.len())].to_vec(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Long/short return vectors `(x_t, 1 + (1 - x_t)/alpha)` of a single stock.
pub fn trading_market(prices: &PriceSeries, margin: MarginSpec) -> Result<MarketSeries> {
    trading_market_with(prices, margin, BreachPolicy::Reject)
}

pub fn trading_market_with(
    prices: &PriceSeries,
    margin: MarginSpec,
    policy: BreachPolicy,
) -> Result<MarketSeries> {
    let mut returns = Vec::with_capacity(prices.len().saturating_sub(1));
    for (day, mut x) in prices.factors().into_iter().enumerate() {
        if x >= margin.limit() {
            match policy {
                BreachPolicy::Reject => {
                    return Err(MarketError::MarginBreach {
                        day: Some(day),
                        x,
                        limit: margin.limit(),
                    })
                }
                BreachPolicy::Clamp => {
                    let clamped = margin.limit() * CLAMP_SHRINK;
                    log::warn!(
                        "{}: day {day} factor {x} clamped to {clamped} (margin alpha {})",
                        prices.ticker(),
                        margin.alpha()
                    );
                    x = clamped;
                }
            }
        }
        returns.push(vec![x, 1.0 + (1.0 - x) / margin.alpha()]);
    }
    MarketSeries::new(
        vec![
            format!("{}:long", prices.ticker()),
            format!("{}:short", prices.ticker()),
        ],
        returns,
        Provenance::Derived(format!("trading({})", prices.ticker())),
    )
}

/// Return vectors of a portfolio of equally long price series.
pub fn portfolio_market(series: &[PriceSeries]) -> Result<MarketSeries> {
    let n = check_equal_lengths(series)?;
    let factors: Vec<Vec<f64>> = series.iter().map(PriceSeries::factors).collect();
    let returns = (0..n.saturating_sub(1))
        .map(|t| factors.iter().map(|f| f[t]).collect())
        .collect();
    MarketSeries::new(
        series.iter().map(|s| s.ticker().to_string()).collect(),
        returns,
        Provenance::Derived("portfolio".into()),
    )
}

fn check_equal_lengths(series: &[PriceSeries]) -> Result<usize> {
    let first = series
        .first()
        .ok_or_else(|| MarketError::DimensionMismatch("no price series".into()))?;
    let n = first.len();
    if let Some(s) = series.iter().find(|s| s.len() != n) {
        return Err(MarketError::DimensionMismatch(format!(
            "series {} has {} prices, expected {n}",
            s.ticker(),
            s.len()
        )));
    }
    Ok(n)
}

/// Two instruments: one constant, one doubling and halving on alternate days.
pub fn cover_market(num_days: usize) -> MarketSeries {
    let returns = (0..num_days)
        .map(|t| vec![1.0, if t % 2 == 0 { 2.0 } else { 0.5 }])
        .collect();
    MarketSeries {
        labels: vec!["constant".into(), "alternating".into()],
        returns,
        provenance: Provenance::Synthetic(format!("cover({num_days})")),
    }
}

/// Price paths behind [`cover_market`]: `num_days + 1` prices each.
pub fn cover_prices(num_days: usize) -> Vec<PriceSeries> {
    let constant = vec![1.0; num_days + 1];
    let alternating = (0..=num_days)
        .map(|t| if t % 2 == 0 { 1.0 } else { 2.0 })
        .collect();
    vec![
        PriceSeries {
            ticker: "constant".into(),
            prices: constant,
        },
        PriceSeries {
            ticker: "alternating".into(),
            prices: alternating,
        },
    ]
}

pub fn constant_prices(instruments: usize, num_days: usize) -> Vec<PriceSeries> {
    (0..instruments)
        .map(|i| PriceSeries {
            ticker: format!("s{}", i + 1),
            prices: vec![1.0; num_days + 1],
        })
        .collect()
}

/// Independent lognormal daily factors `exp(N(mu, sigma^2))`, starting at 1.
pub fn iid_lognormal_prices(
    instruments: usize,
    num_days: usize,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<PriceSeries>> {
    let normal = Normal::new(mu, sigma)
        .map_err(|e| MarketError::InvalidSeries(format!("lognormal parameters: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths: Vec<Vec<f64>> = vec![Vec::with_capacity(num_days + 1); instruments];
    for path in paths.iter_mut() {
        path.push(1.0);
    }
    for _ in 0..num_days {
        for path in paths.iter_mut() {
            let last = *path.last().expect("path starts non-empty");
            path.push(last * normal.sample(&mut rng).exp());
        }
    }
    paths
        .into_iter()
        .enumerate()
        .map(|(i, p)| PriceSeries::new(format!("s{}", i + 1), p))
        .collect()
}

/// Normalized view of the history available at the start of a day.
///
/// Every populated value lies in `(0, 1]`. Fields a strategy does not need
/// are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSnapshot {
    pub day: usize,
    /// `price_history[j-1]` is the price on day `t - j`.
    pub price_history: Vec<f64>,
    /// Minimum over the previous `j` days, `j = 1..=k`.
    pub min_history: Vec<f64>,
    /// Maximum over the previous `j` days, `j = 1..=k`.
    pub max_history: Vec<f64>,
    pub current_price: f64,
    /// `indicators[i][j]`: indicator `j` of instrument `i`.
    pub indicators: Vec<Vec<f64>>,
    pub side_info: Vec<f64>,
}

impl EnvironmentSnapshot {
    pub fn empty(day: usize) -> Self {
        Self {
            day,
            price_history: Vec::new(),
            min_history: Vec::new(),
            max_history: Vec::new(),
            current_price: 1.0,
            indicators: Vec::new(),
            side_info: Vec::new(),
        }
    }

    /// Checks the snapshot invariants; returns a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let in_range = |v: f64| v > 0.0 && v <= 1.0;
        let scalars = self
            .price_history
            .iter()
            .chain(&self.min_history)
            .chain(&self.max_history)
            .chain(std::iter::once(&self.current_price));
        for &v in scalars {
            if !in_range(v) {
                return Err(format!("value {v} outside (0, 1]"));
            }
        }
        for (j, (lo, hi)) in self.min_history.iter().zip(&self.max_history).enumerate() {
            if lo > hi {
                return Err(format!("window {j}: min {lo} above max {hi}"));
            }
        }
        if let Some(first) = self.indicators.first() {
            for j in 0..first.len() {
                let mut col_max = 0.0_f64;
                for row in &self.indicators {
                    let v = row[j];
                    if !in_range(v) {
                        return Err(format!("indicator value {v} outside (0, 1]"));
                    }
                    col_max = col_max.max(v);
                }
                if col_max != 1.0 {
                    return Err(format!("indicator column {j} has maximum {col_max}"));
                }
            }
        }
        Ok(())
    }
}

/// Builds the price-history part of the snapshot for day `t` with a `k`-day window.
///
/// All quantities are divided by the largest raw value in the snapshot, so
/// the maximum normalized value is exactly 1.
pub fn normalize_environment(prices: &[f64], t: usize, k: usize) -> Result<EnvironmentSnapshot> {
    if k == 0 {
        return Err(MarketError::InvalidSeries(
            "window k must be at least 1".into(),
        ));
    }
    let available = prices.len().min(t + 1);
    if t < k || t >= prices.len() {
        return Err(MarketError::InsufficientHistory {
            needed: k + 1,
            available,
        });
    }
    if let Some((row, &value)) = prices[..=t].iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(MarketError::NonPositivePrice {
            row,
            column: 0,
            value,
        });
    }
    let history: Vec<f64> = (1..=k).map(|j| prices[t - j]).collect();
    let mut min_history = Vec::with_capacity(k);
    let mut max_history = Vec::with_capacity(k);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for &p in &history {
        lo = lo.min(p);
        hi = hi.max(p);
        min_history.push(lo);
        max_history.push(hi);
    }
    let scale = hi.max(prices[t]);
    let norm = |v: f64| v / scale;
    Ok(EnvironmentSnapshot {
        day: t,
        price_history: history.into_iter().map(norm).collect(),
        min_history: min_history.into_iter().map(norm).collect(),
        max_history: max_history.into_iter().map(norm).collect(),
        current_price: norm(prices[t]),
        indicators: Vec::new(),
        side_info: Vec::new(),
    })
}

/// Divides each indicator column by its cross-sectional maximum.
pub fn normalize_indicators(raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = raw.first().map_or(0, Vec::len);
    if raw.iter().any(|r| r.len() != k) {
        return Err(MarketError::DimensionMismatch(
            "indicator rows differ in length".into(),
        ));
    }
    let mut out = raw.to_vec();
    for j in 0..k {
        let col_max = raw.iter().map(|r| r[j]).fold(0.0_f64, f64::max);
        for (i, row) in out.iter_mut().enumerate() {
            if !(raw[i][j] > 0.0) {
                return Err(MarketError::NonPositivePrice {
                    row: i,
                    column: j,
                    value: raw[i][j],
                });
            }
            row[j] = raw[i][j] / col_max;
        }
    }
    Ok(out)
}

/// Trailing growth indicators: indicator `j` of instrument `i` is `p_i[t] / p_i[t-j]`.
pub fn growth_indicators(series: &[PriceSeries], t: usize, k: usize) -> Result<Vec<Vec<f64>>> {
    if t < k {
        return Err(MarketError::InsufficientHistory {
            needed: k + 1,
            available: t + 1,
        });
    }
    let raw: Vec<Vec<f64>> = series
        .iter()
        .map(|s| (1..=k).map(|j| s.prices()[t] / s.prices()[t - j]).collect())
        .collect();
    normalize_indicators(&raw)
}

/// One-day momentum side information `p_i[t] / p_i[t-1]`.
pub fn momentum_side_info(series: &[PriceSeries], t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(MarketError::InsufficientHistory {
            needed: 2,
            available: 1,
        });
    }
    Ok(series
        .iter()
        .map(|s| s.prices()[t] / s.prices()[t - 1])
        .collect())
}

/// A market together with the snapshot each of its days is decided on.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub market: MarketSeries,
    pub environments: Vec<EnvironmentSnapshot>,
}

/// Long/short market of one stock, starting once `k` days of history exist.
pub fn trading_scenario(
    prices: &PriceSeries,
    margin: MarginSpec,
    k: usize,
    policy: BreachPolicy,
) -> Result<Scenario> {
    let full = trading_market_with(prices, margin, policy)?;
    if prices.len() < k + 2 {
        return Err(MarketError::InsufficientHistory {
            needed: k + 2,
            available: prices.len(),
        });
    }
    let days = prices.len() - k - 1;
    let environments = (0..days)
        .map(|d| normalize_environment(prices.prices(), d + k, k))
        .collect::<Result<Vec<_>>>()?;
    let returns = full.returns()[k..].to_vec();
    Ok(Scenario {
        market: MarketSeries::new(full.labels().to_vec(), returns, full.provenance().clone())?,
        environments,
    })
}

/// Portfolio market starting after `window` days of history. With a
/// positive window each snapshot carries growth indicators over the window
/// and one-day momentum side information.
pub fn portfolio_scenario(series: &[PriceSeries], window: usize) -> Result<Scenario> {
    let n = check_equal_lengths(series)?;
    if n < window + 2 {
        return Err(MarketError::InsufficientHistory {
            needed: window + 2,
            available: n,
        });
    }
    let full = portfolio_market(series)?;
    let days = n - window - 1;
    let mut environments = Vec::with_capacity(days);
    for d in 0..days {
        let t = d + window;
        let mut env = EnvironmentSnapshot::empty(t);
        if window > 0 {
            env.indicators = growth_indicators(series, t, window)?;
            env.side_info = momentum_side_info(series, t)?;
        }
        environments.push(env);
    }
    Ok(Scenario {
        market: MarketSeries::new(
            full.labels().to_vec(),
            full.returns()[window..].to_vec(),
            full.provenance().clone(),
        )?,
        environments,
    })
}

/// Reads `date,<ticker1>,<ticker2>,...` price files.
///
/// Rows are numbered from 1 (the header is row 0); columns from 0 (the
/// date column). Dates must be ISO-8601 and strictly ascending; empty cells
/// are errors.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<PriceSeries>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| MarketError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_price_csv(file)
}

pub fn parse_price_csv(reader: impl Read) -> Result<Vec<PriceSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |row: usize, column: usize, message: String| MarketError::Parse {
        row,
        column,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(0, 0, e.to_string()))?
        .clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
        return Err(parse_err(
            0,
            0,
            "header must be `date,<ticker1>,...` with at least one ticker".into(),
        ));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if let Some((j, _)) = tickers.iter().enumerate().find(|(_, t)| t.is_empty()) {
        return Err(parse_err(0, j + 1, "empty ticker name".into()));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); tickers.len()];
    let mut last_date: Option<NaiveDate> = None;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(
                row,
                record.len().min(headers.len()),
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| parse_err(row, 0, format!("bad date `{}`: {e}", &record[0])))?;
        if let Some(prev) = last_date {
            if date <= prev {
                return Err(parse_err(
                    row,
                    0,
                    format!("date {date} does not follow {prev}"),
                ));
            }
        }
        last_date = Some(date);
        for (j, col) in columns.iter_mut().enumerate() {
            let cell = &record[j + 1];
            if cell.is_empty() {
                return Err(parse_err(row, j + 1, "missing price".into()));
            }
            let value: f64 = cell
                .parse()
                .map_err(|e| parse_err(row, j + 1, format!("bad price `{cell}`: {e}")))?;
            if !value.is_finite() {
                return Err(parse_err(row, j + 1, format!("non-finite price `{cell}`")));
            }
            if value <= 0.0 {
                return Err(MarketError::NonPositivePrice {
                    row,
                    column: j + 1,
                    value,
                });
            }
            col.push(value);
        }
    }
    Ok(tickers
        .into_iter()
        .zip(columns)
        .map(|(ticker, prices)| PriceSeries { ticker, prices })
        .collect())
}

/// Writes equally long series as a price CSV with consecutive daily dates.
pub fn write_price_csv(
    series: &[PriceSeries],
    start: NaiveDate,
    mut out: impl Write,
) -> Result<()> {
    let n = check_equal_lengths(series)?;
    let mut text = String::from("date");
    for s in series {
        text.push(',');
        text.push_str(s.ticker());
    }
    text.push('\n');
    for t in 0..n {
        let date = start
            .checked_add_days(Days::new(t as u64))
            .ok_or_else(|| MarketError::InvalidSeries("date overflow".into()))?;
        let _ = write!(text, "{}", date.format("%Y-%m-%d"));
        for s in series {
            let _ = write!(text, ",{}", s.prices()[t]);
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(|e| MarketError::Io {
        path: "<output>".into(),
        message: e.to_string(),
    })
}
