//! Experiment configuration files.
//!
//! The format is flat `key = value` lines; `#` starts a comment. Every key is
//! optional and falls back to the default market (10 schools, entries
//! N(1, 3), competition 1, positive utility, alpha 0.95, RSD, prediction
//! noise 0.01%, 3 training rounds, k = 1, trust 1, attack level 4%).
//!
//! Sweeps list their values under `grid_<key> = v1, v2, ...` for any of the
//! varied keys (see [`GRID_KEYS`]).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::analysis::AnalysisConfig;
use crate::engine::SimulationConfig;
use crate::error::{Error, Result};
use crate::market::{Aggregation, UtilitySign};
use crate::mechanisms::{MechanismKind, SchoolSide};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Simulate,
    Deviation,
    BestResponse,
    Sweep,
    WelfareGrid,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "deviation" => Ok(Mode::Deviation),
            "best-response" | "best_response" => Ok(Mode::BestResponse),
            "sweep" => Ok(Mode::Sweep),
            "welfare-grid" | "welfare_grid" => Ok(Mode::WelfareGrid),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Deviation => "deviation",
            Mode::BestResponse => "best-response",
            Mode::Sweep => "sweep",
            Mode::WelfareGrid => "welfare-grid",
        })
    }
}

/// What a sweep runs in each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepScenario {
    /// All truthful versus the attacker deviating.
    #[default]
    Deviation,
    /// The configured market as is.
    Simulate,
}

/// Keys a sweep may vary.
pub const GRID_KEYS: [&str; 12] = [
    "n_schools",
    "mu",
    "sigma",
    "competition",
    "utility_sign",
    "alpha",
    "mechanism",
    "prediction_noise",
    "training_rounds",
    "neighbours",
    "trust",
    "attack_level",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub analysis: AnalysisConfig<f64>,
    /// Level used by attacking schools in simulate, deviation and sweep.
    pub attack_level: f64,
    /// School that deviates.
    pub attacker: usize,
    /// Schools that attack in `simulate` mode.
    pub strategic_schools: Vec<usize>,
    pub welfare_levels: Vec<f64>,
    pub sweep_scenario: SweepScenario,
    /// `(key, raw values)` in file order.
    pub grid: Vec<(String, Vec<String>)>,
    /// Write per-student rows; `None` picks the mode default.
    pub student_rows: Option<bool>,
    pub warmup_explicit: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let analysis = AnalysisConfig::new(SimulationConfig::default());
        Self {
            mode: Mode::Simulate,
            welfare_levels: analysis.action_set.clone(),
            analysis,
            attack_level: 4.0,
            attacker: 0,
            strategic_schools: Vec::new(),
            sweep_scenario: SweepScenario::Deviation,
            grid: Vec::new(),
            student_rows: None,
            warmup_explicit: false,
        }
    }
}

impl ExperimentSpec {
    pub fn base(&self) -> &SimulationConfig<f64> {
        &self.analysis.base
    }

    pub fn base_mut(&mut self) -> &mut SimulationConfig<f64> {
        &mut self.analysis.base
    }

    pub fn writes_student_rows(&self) -> bool {
        self.student_rows
            .unwrap_or(matches!(self.mode, Mode::Simulate | Mode::Deviation))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(grid_key) = key.strip_prefix("grid_") {
            if !GRID_KEYS.contains(&grid_key) {
                return Err(Error::config(
                    key,
                    format!(
                        "cannot sweep `{grid_key}`; allowed: {}",
                        GRID_KEYS.join(", ")
                    ),
                ));
            }
            let values: Vec<String> = split_list(value).map(str::to_string).collect();
            if values.is_empty() {
                return Err(Error::config(key, "empty grid"));
            }
            // Validate each value eagerly against a scratch copy.
            for v in &values {
                self.clone().set(grid_key, v)?;
            }
            self.grid.retain(|(k, _)| k != grid_key);
            self.grid.push((grid_key.to_string(), values));
            return Ok(());
        }

        let c = &mut self.analysis.base;
        match key {
            "mode" => self.mode = parse(key, value)?,
            "n_schools" => {
                let n = parse_count(key, value, 1)?;
                c.n_schools = n;
                c.attack_levels = vec![None; n];
            }
            "students_per_school" => c.students_per_school = parse_count(key, value, 1)?,
            "mu" => c.entry_mean = parse_float(key, value, f64::NEG_INFINITY, f64::INFINITY)?,
            "sigma" => c.entry_std = parse_float(key, value, 0.0, f64::INFINITY)?,
            "competition" => c.competition = parse_fraction(key, value)?,
            "utility_sign" => {
                c.utility_sign = match value {
                    "positive" => UtilitySign::Positive,
                    "negative" => UtilitySign::Negative,
                    _ => return Err(Error::config(key, "expected `positive` or `negative`")),
                }
            }
            "alpha" => {
                let alpha = parse_float(key, value, 0.0, 1.0)?;
                if alpha >= 1.0 {
                    return Err(Error::config(key, "must be in [0, 1)"));
                }
                c.alpha = alpha;
            }
            "mechanism" => c.mechanism.kind = parse::<MechanismKind>(key, value)?,
            "school_side" => c.mechanism.school_side = parse::<SchoolSide>(key, value)?,
            "common_lottery" => c.common_lottery = parse_bool(key, value)?,
            "prediction_noise" => {
                c.predictor.noise_pct = parse_float(key, value, 0.0, f64::INFINITY)?
            }
            "observation_noise" => {
                c.observation_noise_pct = parse_float(key, value, 0.0, f64::INFINITY)?
            }
            "training_rounds" => {
                c.predictor.window = parse_count(key, value, 1)?;
                if !self.warmup_explicit {
                    c.warmup_rounds = c.predictor.window;
                }
            }
            "neighbours" => c.predictor.k = parse_count(key, value, 1)?,
            "trust" => c.trust = parse_float(key, value, 0.0, 1.0)?,
            "attack_level" => self.attack_level = parse_float(key, value, 0.0, 100.0)?,
            "attacker" => self.attacker = parse_count(key, value, 0)?,
            "strategic_schools" => {
                self.strategic_schools = split_list(value)
                    .map(|v| parse_count(key, v, 0))
                    .collect::<Result<_>>()?
            }
            "attributes" => c.dims = parse_count(key, value, 1)?,
            "aggregation" => {
                c.aggregation = match value {
                    "sum" => Aggregation::Sum,
                    "min" => Aggregation::Min,
                    _ => return Err(Error::config(key, "expected `sum` or `min`")),
                }
            }
            "rounds" => c.rounds = parse_count(key, value, 1)?,
            "warmup_rounds" => {
                c.warmup_rounds = parse_count(key, value, 1)?;
                self.warmup_explicit = true;
            }
            "seed" => c.seed = parse(key, value)?,
            "seeds" => self.analysis.n_seeds = parse_count(key, value, 1)?,
            "action_set" => self.analysis.action_set = parse_levels(key, value)?,
            "welfare_levels" => self.welfare_levels = parse_levels(key, value)?,
            "discount_factor" => {
                let beta = parse_float(key, value, 0.0, 1.0)?;
                if beta <= 0.0 {
                    return Err(Error::config(key, "must be in (0, 1]"));
                }
                self.analysis.discount = beta;
            }
            "max_passes" => self.analysis.max_passes = Some(parse_count(key, value, 1)?),
            "sweep_scenario" => {
                self.sweep_scenario = match value {
                    "deviation" => SweepScenario::Deviation,
                    "simulate" => SweepScenario::Simulate,
                    _ => return Err(Error::config(key, "expected `deviation` or `simulate`")),
                }
            }
            "student_rows" => self.student_rows = Some(parse_bool(key, value)?),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Cross-field checks that single keys cannot make.
    pub fn validate(&self) -> Result<()> {
        let base = &self.analysis.base;
        base.validate()?;
        if self.attacker >= base.n_schools {
            return Err(Error::config(
                "attacker",
                format!("must be below n_schools ({})", base.n_schools),
            ));
        }
        if let Some(s) = self
            .strategic_schools
            .iter()
            .find(|s| **s >= base.n_schools)
        {
            return Err(Error::config(
                "strategic_schools",
                format!("school {s} does not exist"),
            ));
        }
        match self.mode {
            Mode::Deviation | Mode::BestResponse | Mode::WelfareGrid => self.analysis.validate()?,
            Mode::Sweep => {
                if self.grid.is_empty() {
                    return Err(Error::config(
                        "grid_*",
                        "a sweep needs at least one grid_<key> entry",
                    ));
                }
                if self.sweep_scenario == SweepScenario::Deviation {
                    self.analysis.validate()?;
                }
            }
            Mode::Simulate => {}
        }
        if matches!(self.mode, Mode::BestResponse | Mode::WelfareGrid) && base.n_schools < 2 {
            return Err(Error::config("n_schools", "needs at least 2 schools"));
        }
        Ok(())
    }

    /// Market for `simulate`: `strategic_schools` attack at `attack_level`.
    pub fn simulation_config(&self) -> SimulationConfig<f64> {
        let mut c = self.analysis.truthful_market();
        for &s in &self.strategic_schools {
            c.attack_levels[s] = Some(self.attack_level);
        }
        c
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: V::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_float(key: &str, value: &str, lo: f64, hi: f64) -> Result<f64> {
    let x: f64 = parse(key, value)?;
    if !x.is_finite() || x < lo || x > hi {
        return Err(Error::config(
            key,
            format!("{value} outside allowed range [{lo}, {hi}]"),
        ));
    }
    Ok(x)
}

fn parse_count(key: &str, value: &str, min: usize) -> Result<usize> {
    let x: usize = parse(key, value)?;
    if x < min {
        return Err(Error::config(
            key,
            format!("{value} is below the minimum {min}"),
        ));
    }
    Ok(x)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, "expected true or false")),
    }
}

/// Accepts `0.25` as well as `1/4`.
fn parse_fraction(key: &str, value: &str) -> Result<f64> {
    let x = match value.split_once('/') {
        Some((num, den)) => {
            let num: f64 = parse(key, num.trim())?;
            let den: f64 = parse(key, den.trim())?;
            num / den
        }
        None => parse(key, value)?,
    };
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::config(
            key,
            format!("{value} must be a positive number"),
        ));
    }
    Ok(x)
}

fn parse_levels(key: &str, value: &str) -> Result<Vec<f64>> {
    let levels: Vec<f64> = split_list(value)
        .map(|v| parse_float(key, v, 0.0, 100.0))
        .collect::<Result<_>>()?;
    if levels.is_empty() {
        return Err(Error::config(key, "needs at least one level"));
    }
    Ok(levels)
}

/// Parses configuration text; unset keys keep their defaults.
pub fn parse_str(text: &str) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
        seen.push(key.to_string());
        spec.set(key, value)?;
    }
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text)
}
