//! Trace ingestion, error extraction, scenario assembly, result schemas.
//!
//! Hourly traces arrive as CSV with the header
//! `timestamp,utility_id,actual_mwh,predicted_mwh`; each hour is an
//! independent game instance and timestamps are metadata. The error sign
//! convention is fixed as `eps = predicted - actual` (a prediction above
//! the realized load is a positive error), which the tests assert because
//! a silent flip would flip every best-response sign.

use crate::cost::{MarketScenario, Utility};
use crate::error::{Error, Result};
use crate::pricing::PricingModel;
use crate::uncertainty::{ErrorModel, JointErrorModel};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// One hourly observation for one utility.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub timestamp: NaiveDateTime,
    pub actual_mwh: f64,
    pub predicted_mwh: f64,
}

/// Ingested traces grouped by utility, time-sorted.
#[derive(Clone, Debug, Default)]
pub struct TraceSet {
    groups: BTreeMap<String, Vec<TracePoint>>,
}

impl TraceSet {
    pub fn utilities(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn group(&self, utility_id: &str) -> Option<&[TracePoint]> {
        self.groups.get(utility_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

const TRACE_HEADER: [&str; 4] = ["timestamp", "utility_id", "actual_mwh", "predicted_mwh"];
const MIN_ROWS_PER_UTILITY: usize = 30;

fn parse_timestamp(raw: &str, line: u64) -> Result<NaiveDateTime> {
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(t);
        }
    }
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Ok(t.naive_utc());
    }
    Err(Error::Parse { line, msg: format!("bad ISO-8601 timestamp {raw:?}") })
}

/// Reads an hourly trace CSV. Rows group by utility and sort by time;
/// duplicate (utility, timestamp) pairs and malformed fields are errors
/// that name the offending line.
pub fn ingest_traces(path: &Path) -> Result<TraceSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != TRACE_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {TRACE_HEADER:?}, got {got:?}"),
        });
    }
    let mut groups: BTreeMap<String, Vec<TracePoint>> = BTreeMap::new();
    let mut seen: std::collections::HashSet<(String, NaiveDateTime)> = Default::default();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::Parse { line, msg: format!("expected 4 fields, got {}", record.len()) });
        }
        let timestamp = parse_timestamp(record[0].trim(), line)?;
        let utility_id = record[1].trim().to_string();
        if utility_id.is_empty() {
            return Err(Error::Parse { line, msg: "empty utility_id".into() });
        }
        let actual_mwh: f64 = record[2].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("non-numeric actual_mwh {:?}", &record[2]),
        })?;
        let predicted_mwh: f64 = record[3].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("non-numeric predicted_mwh {:?}", &record[3]),
        })?;
        if !actual_mwh.is_finite() || !predicted_mwh.is_finite() {
            return Err(Error::Parse { line, msg: "load values must be finite".into() });
        }
        if !seen.insert((utility_id.clone(), timestamp)) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate (utility, timestamp) = ({utility_id}, {timestamp})"),
            });
        }
        groups
            .entry(utility_id)
            .or_default()
            .push(TracePoint { timestamp, actual_mwh, predicted_mwh });
    }
    for points in groups.values_mut() {
        points.sort_by_key(|p| p.timestamp);
    }
    Ok(TraceSet { groups })
}

/// Writes a trace set back in the ingestion schema (round-trip safe).
pub fn emit_traces<W: Write>(set: &TraceSet, mut out: W) -> Result<()> {
    writeln!(out, "{}", TRACE_HEADER.join(","))?;
    for (id, points) in &set.groups {
        for p in points {
            writeln!(
                out,
                "{},{},{},{}",
                p.timestamp.format("%Y-%m-%dT%H:%M:%S"),
                id,
                p.actual_mwh,
                p.predicted_mwh
            )?;
        }
    }
    Ok(())
}

/// Raw error statistics before centering.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ErrorSummary {
    pub mean_mwh: f64,
    pub std_mwh: f64,
    pub n: usize,
}

/// Extracts `eps = predicted - actual` from a trace group and builds the
/// centered empirical model. The summary reports raw mean and sample
/// standard deviation before centering.
pub fn extract_errors(points: &[TracePoint]) -> Result<(ErrorModel, ErrorSummary)> {
    if points.len() < MIN_ROWS_PER_UTILITY {
        return Err(Error::invalid(format!(
            "need >= {MIN_ROWS_PER_UTILITY} trace rows, got {}",
            points.len()
        )));
    }
    let errors: Vec<f64> = points.iter().map(|p| p.predicted_mwh - p.actual_mwh).collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    if var.sqrt() <= 1e-9 * (1.0 + mean.abs()) {
        return Err(Error::invalid(
            "predictions track actuals up to rounding; zero-variance errors are degenerate",
        ));
    }
    let summary = ErrorSummary { mean_mwh: mean, std_mwh: var.sqrt(), n: errors.len() };
    Ok((ErrorModel::empirical(errors)?, summary))
}

/// Reads two-column `a,b` CSV rows; a non-numeric first row is treated
/// as an optional header.
fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u64 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (a, b) = trimmed.split_once(',').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected two comma-separated fields, got {trimmed:?}"),
        })?;
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(a), Ok(b)) => out.push((a, b)),
            _ if idx == 0 => continue, // header
            _ => {
                return Err(Error::Parse { line, msg: format!("bad numbers {trimmed:?}") })
            }
        }
    }
    Ok(out)
}

/// Reads a bidding curve from `price,value` rows.
pub fn read_curve_csv(path: &Path) -> Result<crate::curves::BiddingCurve> {
    let pairs = read_pairs(path)?;
    let (prices, values) = pairs.into_iter().unzip();
    crate::curves::BiddingCurve::new(prices, values)
}

/// Reads a price belief from `price,mass` rows.
pub fn read_belief_csv(path: &Path) -> Result<crate::curves::PriceBelief> {
    let pairs = read_pairs(path)?;
    let (prices, masses) = pairs.into_iter().unzip();
    crate::curves::PriceBelief::new(prices, masses)
}

/// Reads a single-column CSV of MWh values; a non-numeric first row is
/// treated as an optional header.
pub fn read_error_samples(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u64 + 1;
        let field = raw.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => {
                return Err(Error::Parse { line, msg: format!("non-finite sample {v}") })
            }
            Err(_) if idx == 0 => continue, // header
            Err(_) => {
                return Err(Error::Parse { line, msg: format!("non-numeric sample {field:?}") })
            }
        }
    }
    Ok(out)
}

// --- scenario configuration -------------------------------------------------

/// Error-model stanza of a scenario config.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorConfig {
    Gaussian { sigma_mwh: f64 },
    Laplace { scale_mwh: f64 },
    PointMass,
    Empirical { samples_mwh: Vec<f64> },
    /// Extract errors for `utility_id` from an hourly trace CSV.
    Trace { path: String, utility_id: String },
    /// Single-column CSV of pre-computed error samples.
    ErrorsCsv { path: String },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    pub id: String,
    pub demand_mwh: f64,
    pub error: ErrorConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum PricingConfig {
    PiecewiseLinear { a1: f64, a2: f64, b1: f64, b2: f64 },
    GeneralOdd { a: f64, k: f64, b1: f64, b2: f64 },
}

impl From<&PricingModel> for PricingConfig {
    fn from(m: &PricingModel) -> Self {
        match *m {
            PricingModel::PiecewiseLinear { a1, a2, b1, b2 } => {
                PricingConfig::PiecewiseLinear { a1, a2, b1, b2 }
            }
            PricingModel::GeneralOdd { a, k, b1, b2 } => {
                PricingConfig::GeneralOdd { a, k, b1, b2 }
            }
        }
    }
}

/// JSON scenario description. Omitted `p_d` defaults to 35 $/MWh and an
/// omitted pricing block to the symmetric reference fit; unknown keys are
/// rejected so config typos fail fast.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pricing: Option<PricingConfig>,
    pub utilities: Vec<UtilityConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
}

pub const DEFAULT_P_D: f64 = 35.0;

pub fn parse_scenario_config(json: &str) -> Result<ScenarioConfig> {
    serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))
}

fn resolve_error_model(cfg: &ErrorConfig, base_dir: &Path) -> Result<ErrorModel> {
    match cfg {
        ErrorConfig::Gaussian { sigma_mwh } => ErrorModel::gaussian(*sigma_mwh),
        ErrorConfig::Laplace { scale_mwh } => ErrorModel::laplace(*scale_mwh),
        ErrorConfig::PointMass => ErrorModel::point_mass(0.0),
        ErrorConfig::Empirical { samples_mwh } => ErrorModel::empirical(samples_mwh.clone()),
        ErrorConfig::Trace { path, utility_id } => {
            let traces = ingest_traces(&base_dir.join(path))?;
            let group = traces.group(utility_id).ok_or_else(|| {
                Error::Config(format!("trace file {path:?} has no utility {utility_id:?}"))
            })?;
            Ok(extract_errors(group)?.0)
        }
        ErrorConfig::ErrorsCsv { path } => {
            ErrorModel::empirical(read_error_samples(&base_dir.join(path))?)
        }
    }
}

/// Builds a validated scenario; trace paths resolve relative to `base_dir`.
pub fn build_scenario(config: &ScenarioConfig, base_dir: &Path) -> Result<MarketScenario> {
    if config.utilities.is_empty() {
        return Err(Error::Config("config needs at least one utility".into()));
    }
    let mut utilities = Vec::with_capacity(config.utilities.len());
    let mut marginals = Vec::with_capacity(config.utilities.len());
    for u in &config.utilities {
        utilities.push(Utility { id: u.id.clone(), demand: u.demand_mwh });
        marginals.push(resolve_error_model(&u.error, base_dir)?);
    }
    let joint = match &config.correlation {
        None => JointErrorModel::independent(marginals)?,
        Some(rows) => {
            if rows.len() != config.utilities.len() {
                return Err(Error::Config(format!(
                    "correlation is {}x{} but there are {} utilities",
                    rows.len(),
                    rows.first().map(Vec::len).unwrap_or(0),
                    config.utilities.len()
                )));
            }
            JointErrorModel::correlated(marginals, rows)?
        }
    };
    let pricing = match &config.pricing {
        None => PricingModel::reference_symmetric(),
        Some(PricingConfig::PiecewiseLinear { a1, a2, b1, b2 }) => {
            PricingModel::piecewise_linear(*a1, *a2, *b1, *b2)?
        }
        Some(PricingConfig::GeneralOdd { a, k, b1, b2 }) => {
            PricingModel::general_odd(*a, *k, *b1, *b2)?
        }
    };
    MarketScenario::new(utilities, joint, pricing, config.p_d.unwrap_or(DEFAULT_P_D))
}

/// Canonical config text for a resolved scenario: defaults made explicit,
/// trace references materialized as inline samples. Feeding the echo back
/// through [`build_scenario`] reproduces the same market.
pub fn echo_scenario(scenario: &MarketScenario) -> String {
    let utilities = scenario
        .utilities()
        .iter()
        .zip(scenario.joint().marginals())
        .map(|(u, m)| UtilityConfig {
            id: u.id.clone(),
            demand_mwh: u.demand,
            error: match m.kind_name() {
                "gaussian" => ErrorConfig::Gaussian { sigma_mwh: m.sigma() },
                "laplace" => ErrorConfig::Laplace {
                    scale_mwh: m.sigma() / std::f64::consts::SQRT_2,
                },
                "empirical" => ErrorConfig::Empirical {
                    samples_mwh: m.samples().unwrap_or_default().to_vec(),
                },
                _ => ErrorConfig::PointMass,
            },
        })
        .collect();
    let correlation = match scenario.joint().correlation() {
        crate::uncertainty::Correlation::Independent => None,
        crate::uncertainty::Correlation::Matrix(m) => Some(m.rows()),
    };
    let config = ScenarioConfig {
        p_d: Some(scenario.p_d()),
        pricing: Some(PricingConfig::from(scenario.pricing())),
        utilities,
        correlation,
    };
    serde_json::to_string_pretty(&config).expect("scenario config serializes")
}
