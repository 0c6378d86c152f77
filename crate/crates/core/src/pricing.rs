//! Real-time spot-price rules.
//!
//! The spot price responds to the market-level mismatch: shortfall is
//! bought at a premium, surplus sold back at a discount, and the jump at
//! zero is the premium paid for urgent regulating power. Two families are
//! supported: the piecewise-linear rule, and an odd power-curve rule with
//! a gap whose slope profile decides which equilibrium guarantees apply.

use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::fmt;

/// Two-sided tolerance used for the `b1 + b2 = 2` checks.
const GAP_SUM_TOL: f64 = 1e-12;
/// Slack for the finite-difference derivative-ordering checks.
const CONDITION_SLACK: f64 = 1e-9;

/// Spot-price rule `p_s(delta, p_d)`.
#[derive(Clone, Debug, PartialEq)]
pub enum PricingModel {
    /// `p_s = (a1*delta + b1) * p_d` above zero, `(a2*delta + b2) * p_d`
    /// below, `p_d` at zero.
    PiecewiseLinear { a1: f64, a2: f64, b1: f64, b2: f64 },
    /// Odd power curve with a gap: `p_s = (sign(delta)*a*|delta|^k + b) * p_d`
    /// with `b = b1` above zero and `b2` below. Enforces `b1 + b2 = 2`,
    /// `b1 >= b2`.
    GeneralOdd { a: f64, k: f64, b1: f64, b2: f64 },
}

/// Slope-profile classes of an odd pricing curve, checked by finite
/// differences on a grid. `SteepeningSlope` (rising marginal price away
/// from balance) pins down uniqueness of the equilibrium;
/// the flattening classes give fault immunity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Condition {
    /// Derivative non-decreasing in |delta| and strictly positive.
    SteepeningSlope,
    /// Derivative non-increasing in |delta|, non-negative, with a price gap.
    FlatteningSlopeWithGap,
    /// Derivative strictly decreasing in |delta|, non-negative.
    StrictlyFlatteningSlope,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::SteepeningSlope => "steepening_slope",
            Condition::FlatteningSlopeWithGap => "flattening_slope_with_gap",
            Condition::StrictlyFlatteningSlope => "strictly_flattening_slope",
        };
        f.write_str(s)
    }
}

impl PricingModel {
    pub fn piecewise_linear(a1: f64, a2: f64, b1: f64, b2: f64) -> Result<Self> {
        for (name, v) in [("a1", a1), ("a2", a2), ("b1", b1), ("b2", b2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("pricing {name} must be >= 0, got {v}")));
            }
        }
        Ok(PricingModel::PiecewiseLinear { a1, a2, b1, b2 })
    }

    pub fn general_odd(a: f64, k: f64, b1: f64, b2: f64) -> Result<Self> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::invalid(format!("power coefficient a must be >= 0, got {a}")));
        }
        if !k.is_finite() || k <= 0.0 {
            return Err(Error::invalid(format!("power exponent k must be > 0, got {k}")));
        }
        if !b1.is_finite() || !b2.is_finite() || b1 < 0.0 || b2 < 0.0 {
            return Err(Error::invalid("pricing b1, b2 must be >= 0"));
        }
        if (b1 + b2 - 2.0).abs() > GAP_SUM_TOL {
            return Err(Error::invalid(format!(
                "odd pricing requires b1 + b2 = 2, got {}",
                b1 + b2
            )));
        }
        if b1 < b2 {
            return Err(Error::invalid("odd pricing requires b1 >= b2"));
        }
        Ok(PricingModel::GeneralOdd { a, k, b1, b2 })
    }

    /// The bundled symmetric regulating-market fit: a1 = a2 = 0.0034, b1 = 1.2378, b2 = 0.7622.
    pub fn reference_symmetric() -> Self {
        PricingModel::PiecewiseLinear { a1: 0.0034, a2: 0.0034, b1: 1.2378, b2: 0.7622 }
    }

    /// The bundled asymmetric regulating-market fit: a1 = 0.0034, a2 = 0.0005, b1 = 1.2378,
    /// b2 = 0.6638.
    pub fn reference_asymmetric() -> Self {
        PricingModel::PiecewiseLinear { a1: 0.0034, a2: 0.0005, b1: 1.2378, b2: 0.6638 }
    }

    /// Spot price for mismatch `delta` at day-ahead price `p_d > 0`.
    pub fn spot_price(&self, delta: f64, p_d: f64) -> f64 {
        debug_assert!(p_d > 0.0);
        if delta == 0.0 {
            return p_d;
        }
        match *self {
            PricingModel::PiecewiseLinear { a1, a2, b1, b2 } => {
                if delta > 0.0 {
                    (a1 * delta + b1) * p_d
                } else {
                    (a2 * delta + b2) * p_d
                }
            }
            PricingModel::GeneralOdd { a, k, b1, b2 } => {
                let odd = delta.signum() * a * delta.abs().powf(k);
                let b = if delta > 0.0 { b1 } else { b2 };
                (odd + b) * p_d
            }
        }
    }

    /// One-sided intercepts at zero, as multiples of `p_d`: the limits
    /// from above use `b1`, from below `b2`.
    pub fn intercepts(&self) -> (f64, f64) {
        match *self {
            PricingModel::PiecewiseLinear { b1, b2, .. } => (b1, b2),
            PricingModel::GeneralOdd { b1, b2, .. } => (b1, b2),
        }
    }

    /// Price jump at zero in multiples of `p_d`.
    pub fn gap(&self) -> f64 {
        let (b1, b2) = self.intercepts();
        b1 - b2
    }

    /// True iff this is the piecewise-linear symmetric rule:
    /// a1 = a2, b1 + b2 = 2 (within 1e-12), b1 > b2.
    pub fn check_symmetric(&self) -> bool {
        match *self {
            PricingModel::PiecewiseLinear { a1, a2, b1, b2 } => {
                a1 == a2 && (b1 + b2 - 2.0).abs() <= GAP_SUM_TOL && b1 > b2
            }
            PricingModel::GeneralOdd { .. } => false,
        }
    }

    /// Classifies the odd power rule's slope profile on `grid` (finite
    /// central differences, step = grid step, >= 8 points). `p_d` scales
    /// the curve but not the orderings; it is fixed at 1 here.
    pub fn classify_conditions(&self, grid: &[f64]) -> Result<BTreeSet<Condition>> {
        let (a, k, b1, b2) = match *self {
            PricingModel::GeneralOdd { a, k, b1, b2 } => (a, k, b1, b2),
            PricingModel::PiecewiseLinear { .. } => {
                return Err(Error::EngineMismatch(
                    "condition classification applies to the odd power rule".into(),
                ))
            }
        };
        if grid.len() < 8 {
            return Err(Error::invalid("condition grid needs at least 8 points"));
        }
        let mut xs: Vec<f64> = grid.to_vec();
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let step = xs[1] - xs[0];
        if step <= 0.0 || xs.windows(2).any(|w| (w[1] - w[0] - step).abs() > 1e-9 * step.abs()) {
            return Err(Error::invalid("condition grid must be uniform and increasing"));
        }
        let odd = |x: f64| x.signum() * a * x.abs().powf(k);
        // derivatives at |x| of the interior points; the curve is odd so
        // its derivative is even and the positive half-axis suffices
        let mut abscissae: Vec<f64> = xs[1..xs.len() - 1].iter().map(|x| x.abs()).collect();
        abscissae.sort_by(|p, q| p.partial_cmp(q).unwrap());
        abscissae.dedup_by(|p, q| (*p - *q).abs() <= 1e-9 * step);
        let deriv: Vec<f64> = abscissae
            .iter()
            .map(|&x| (odd(x + step) - odd(x - step)) / (2.0 * step))
            .collect();

        let non_decreasing = deriv.windows(2).all(|w| w[1] >= w[0] - CONDITION_SLACK);
        let non_increasing = deriv.windows(2).all(|w| w[1] <= w[0] + CONDITION_SLACK);
        let strictly_decreasing = deriv.windows(2).all(|w| w[1] <= w[0] - CONDITION_SLACK);
        let positive = deriv.iter().all(|&d| d > CONDITION_SLACK);
        let non_negative = deriv.iter().all(|&d| d >= -CONDITION_SLACK);

        let mut set = BTreeSet::new();
        if non_decreasing && positive {
            set.insert(Condition::SteepeningSlope);
        }
        if b1 > b2 && non_increasing && non_negative {
            set.insert(Condition::FlatteningSlopeWithGap);
        }
        if strictly_decreasing && non_negative {
            set.insert(Condition::StrictlyFlatteningSlope);
        }
        Ok(set)
    }

    /// Flat `key=value` text block. Only the keys the variant uses appear.
    pub fn to_kv_text(&self) -> String {
        match *self {
            PricingModel::PiecewiseLinear { a1, a2, b1, b2 } => format!(
                "variant=piecewise_linear\na1={a1}\na2={a2}\nb1={b1}\nb2={b2}\n"
            ),
            PricingModel::GeneralOdd { a, k, b1, b2 } => {
                format!("variant=general_odd\na={a}\nk={k}\nb1={b1}\nb2={b2}\n")
            }
        }
    }

    /// Parses the `key=value` block emitted by [`Self::to_kv_text`].
    /// Unknown keys are errors.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut variant = None;
        let mut vals: std::collections::BTreeMap<&str, f64> = Default::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx as u64 + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "variant" {
                variant = Some(value.to_string());
                continue;
            }
            if !matches!(key, "a1" | "a2" | "b1" | "b2" | "a" | "k") {
                return Err(Error::Parse {
                    line: idx as u64 + 1,
                    msg: format!("unknown pricing key {key:?}"),
                });
            }
            let v: f64 = value.parse().map_err(|_| Error::Parse {
                line: idx as u64 + 1,
                msg: format!("bad number {value:?} for {key}"),
            })?;
            vals.insert(match key {
                "a1" => "a1",
                "a2" => "a2",
                "b1" => "b1",
                "b2" => "b2",
                "a" => "a",
                _ => "k",
            }, v);
        }
        let get = |k: &str| {
            vals.get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("pricing text missing key {k:?}")))
        };
        match variant.as_deref() {
            Some("piecewise_linear") => {
                PricingModel::piecewise_linear(get("a1")?, get("a2")?, get("b1")?, get("b2")?)
            }
            Some("general_odd") => {
                PricingModel::general_odd(get("a")?, get("k")?, get("b1")?, get("b2")?)
            }
            Some(v) => Err(Error::Config(format!("unknown pricing variant {v:?}"))),
            None => Err(Error::Config("pricing text missing variant".into())),
        }
    }
}
