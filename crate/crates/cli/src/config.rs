//! Flat `key=value` run configuration. Command-line values override file
//! values, which override the defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use unifolio_core::market_model::BreachPolicy;
use unifolio_core::strategies::{MaAllocation, SideInfoModel, SrAllocation};

use crate::CliError;

/// Every key the configuration accepts.
pub const KEYS: &[&str] = &[
    "market",
    "csv",
    "days",
    "instruments",
    "mu",
    "sigma",
    "ticker",
    "strategy",
    "k",
    "alloc",
    "alpha",
    "margin_policy",
    "side_info",
    "mode",
    "w",
    "grid",
    "grid_delta",
    "epsilon",
    "samples",
    "min_samples",
    "burn_in",
    "chains",
    "thin",
    "damping",
    "seed",
    "intervals",
    "out",
    "tv_threshold",
    "exact_cap",
    "confidence",
    "nu",
    "kappa",
    "trials",
];

#[derive(Debug, Clone, PartialEq)]
pub enum MarketSource {
    Cover,
    Constant,
    IidLognormal { mu: f64, sigma: f64 },
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    Crp,
    CrpSide(SideInfoModel),
    MovingAverage(MaAllocation),
    SupportResistance(SrAllocation),
    IndicatorAggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fixed,
    Exact,
    Sampled,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingChoice {
    Off,
    Auto,
    Manual { gamma: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub market: MarketSource,
    /// Market days for synthetic sources.
    pub days: usize,
    pub instruments: usize,
    pub ticker: Option<String>,
    pub strategy: StrategyKind,
    pub k: usize,
    pub alpha: f64,
    pub margin_policy: BreachPolicy,
    pub mode: Mode,
    pub w: Option<Vec<f64>>,
    /// Collapse the grid to the single point `w` (or the simplex centre).
    pub single_point_grid: bool,
    pub grid_delta: f64,
    pub epsilon: Option<f64>,
    pub samples: usize,
    pub min_samples: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub thin: usize,
    pub damping: DampingChoice,
    pub seed: Option<u64>,
    pub intervals: usize,
    pub out: PathBuf,
    pub tv_threshold: f64,
    pub exact_cap: usize,
    pub confidence: f64,
    pub nu: f64,
    pub kappa: f64,
    pub trials: usize,
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected key=value, got {line:?}", i + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Splits a `key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String), CliError> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected key=value, got {text:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }
}

impl RunConfig {
    /// Builds a configuration from file pairs and overrides (later pairs win).
    pub fn from_pairs(
        file: &[(String, String)],
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (k, v) in file.iter().chain(overrides) {
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("unknown key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }
        let v = Values(map);

        let market = match v.get("market").unwrap_or("cover") {
            "cover" => MarketSource::Cover,
            "constant" => MarketSource::Constant,
            "iid-lognormal" => MarketSource::IidLognormal {
                mu: v.parse("mu", 0.0)?,
                sigma: v.parse("sigma", 0.02)?,
            },
            "csv" => MarketSource::Csv(PathBuf::from(
                v.get("csv")
                    .ok_or_else(|| CliError::Config("market=csv needs csv=PATH".into()))?,
            )),
            other => return Err(CliError::Config(format!("unknown market {other:?}"))),
        };
        let alloc = v.get("alloc");
        let strategy = match v.get("strategy").unwrap_or("crp") {
            "crp" => StrategyKind::Crp,
            "crpside" => {
                StrategyKind::CrpSide(match v.get("side_info").unwrap_or("proportional") {
                    "proportional" => SideInfoModel::Proportional,
                    "onehot" => SideInfoModel::OneHot,
                    other => return Err(CliError::Config(format!("unknown side_info {other:?}"))),
                })
            }
            "ma" => StrategyKind::MovingAverage(match alloc.unwrap_or("line") {
                "step" => MaAllocation::Step,
                "linear-step" => MaAllocation::LinearStep,
                "line" => MaAllocation::Line,
                other => return Err(CliError::Config(format!("unknown ma alloc {other:?}"))),
            }),
            "sr" => StrategyKind::SupportResistance(match alloc.unwrap_or("plane") {
                "step" => SrAllocation::Step,
                "smoothed" => SrAllocation::Smoothed,
                "plane" => SrAllocation::Plane,
                other => return Err(CliError::Config(format!("unknown sr alloc {other:?}"))),
            }),
            "ia" => StrategyKind::IndicatorAggregation,
            other => return Err(CliError::Config(format!("unknown strategy {other:?}"))),
        };
        let mode = match v.get("mode").unwrap_or("exact") {
            "fixed" => Mode::Fixed,
            "exact" => Mode::Exact,
            "sampled" => Mode::Sampled,
            "dynamic" => Mode::Dynamic,
            other => return Err(CliError::Config(format!("unknown mode {other:?}"))),
        };
        let w = match v.get("w") {
            None => None,
            Some(text) => Some(
                text.split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| CliError::Config(format!("w: cannot parse {text:?}")))?,
            ),
        };
        let epsilon = match v.get("epsilon") {
            None | Some("none") => None,
            Some(text) => Some(
                text.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("epsilon: cannot parse {text:?}")))?,
            ),
        };
        let damping = match v.get("damping").unwrap_or("auto") {
            "auto" => DampingChoice::Auto,
            "off" => DampingChoice::Off,
            text => {
                let parts: Vec<f64> = text
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| CliError::Config(format!("damping: cannot parse {text:?}")))?;
                match parts[..] {
                    [gamma, sigma] => DampingChoice::Manual { gamma, sigma },
                    _ => {
                        return Err(CliError::Config(
                            "damping must be auto, off or GAMMA,SIGMA".into(),
                        ))
                    }
                }
            }
        };
        let seed = match v.get("seed") {
            None => None,
            Some(text) => Some(
                text.parse::<u64>()
                    .map_err(|_| CliError::Config(format!("seed: cannot parse {text:?}")))?,
            ),
        };
        let single_point_grid = match v.get("grid").unwrap_or("full") {
            "full" => false,
            "point" => true,
            other => return Err(CliError::Config(format!("unknown grid {other:?}"))),
        };
        let margin_policy = match v.get("margin_policy").unwrap_or("reject") {
            "reject" => BreachPolicy::Reject,
            "clamp" => BreachPolicy::Clamp,
            other => return Err(CliError::Config(format!("unknown margin_policy {other:?}"))),
        };

        let config = RunConfig {
            market,
            days: v.parse("days", 20)?,
            instruments: v.parse("instruments", 2)?,
            ticker: v.get("ticker").map(str::to_string),
            strategy,
            k: v.parse("k", 2)?,
            alpha: v.parse("alpha", 1.0)?,
            margin_policy,
            mode,
            w,
            single_point_grid,
            grid_delta: v.parse("grid_delta", 0.05)?,
            epsilon,
            samples: v.parse("samples", 10_000)?,
            min_samples: v.parse("min_samples", 1)?,
            burn_in: v.parse("burn_in", 100_000)?,
            chains: v.parse("chains", 8)?,
            thin: v.parse("thin", 1)?,
            damping,
            seed,
            intervals: v.parse("intervals", 1)?,
            out: PathBuf::from(v.get("out").unwrap_or("out")),
            tv_threshold: v.parse("tv_threshold", 0.05)?,
            exact_cap: v.parse("exact_cap", 10_000)?,
            confidence: v.parse("confidence", 0.1)?,
            nu: v.parse("nu", 0.01)?,
            kappa: v.parse("kappa", 1.0)?,
            trials: v.parse("trials", 20)?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Reads the optional file, then applies the overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let file = match path {
            None => Vec::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                parse_config_text(&text)?
            }
        };
        Self::from_pairs(&file, overrides)
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return fail(format!("epsilon must lie in (0, 1), got {e}"));
            }
        }
        if !(self.grid_delta > 0.0 && self.grid_delta <= 1.0) {
            return fail(format!(
                "grid_delta must lie in (0, 1], got {}",
                self.grid_delta
            ));
        }
        if self.mode == Mode::Sampled && self.seed.is_none() {
            return fail("sampled mode needs a seed".into());
        }
        if self.k < 2 {
            return fail(format!("k must be at least 2, got {}", self.k));
        }
        if self.days == 0 || self.instruments == 0 {
            return fail("days and instruments must be positive".into());
        }
        if self.chains == 0 || self.thin == 0 || self.samples == 0 {
            return fail("samples, chains and thin must be positive".into());
        }
        if self.intervals == 0 {
            return fail("intervals must be positive".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return fail(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            ));
        }
        Ok(())
    }
}
