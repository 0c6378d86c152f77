//! Expected per-unit procurement cost engines.
//!
//! A utility settles `D_i - Delta_i` day-ahead at `p_d` and the mismatch
//! `Delta_i = mu_i - eps_i` in real time at the spot price, so its average
//! buying cost is `p_d + (p_s - p_d) * Delta_i / D_i`. Four engines
//! compute the expectation: nested 1-D quadrature for independent errors
//! under symmetric pricing, a Gaussian closed form for correlated errors,
//! a general tensor-grid engine for arbitrary pricing, and Monte Carlo.

mod closed_form;
mod mc;
mod quadrature;
mod two_d;

pub use closed_form::expected_abc_closed_form;
pub use mc::{expected_abc_mc, expected_abc_total_mc};
pub use quadrature::{expected_abc_quadrature, expected_abc_total_quadrature};
pub use two_d::expected_abc_2d_quadrature;

pub(crate) use closed_form::ClosedFormContext;
pub(crate) use quadrature::{QuadContext, TotalContext};
pub(crate) use two_d::TwoDContext;

use crate::error::{Error, Result};
use crate::pricing::PricingModel;
use crate::uncertainty::JointErrorModel;
use serde::Serialize;

/// A market participant: identifier plus actual net load (MWh).
#[derive(Clone, Debug, Serialize)]
pub struct Utility {
    pub id: String,
    pub demand: f64,
}

/// The full game instance: utilities, joint error model, pricing rule,
/// and the day-ahead clearing price.
#[derive(Clone, Debug)]
pub struct MarketScenario {
    utilities: Vec<Utility>,
    joint: JointErrorModel,
    pricing: PricingModel,
    p_d: f64,
}

impl MarketScenario {
    pub fn new(
        utilities: Vec<Utility>,
        joint: JointErrorModel,
        pricing: PricingModel,
        p_d: f64,
    ) -> Result<Self> {
        if utilities.is_empty() {
            return Err(Error::invalid("scenario needs at least one utility"));
        }
        if joint.n() != utilities.len() {
            return Err(Error::invalid(format!(
                "{} utilities but joint error model has {} marginals",
                utilities.len(),
                joint.n()
            )));
        }
        if let Some(u) = utilities.iter().find(|u| u.demand <= 0.0 || !u.demand.is_finite()) {
            return Err(Error::invalid(format!(
                "utility {:?} must have positive finite demand, got {}",
                u.id, u.demand
            )));
        }
        if p_d <= 0.0 || !p_d.is_finite() {
            return Err(Error::invalid(format!("day-ahead price must be > 0, got {p_d}")));
        }
        Ok(Self { utilities, joint, pricing, p_d })
    }

    pub fn n(&self) -> usize {
        self.utilities.len()
    }

    pub fn utilities(&self) -> &[Utility] {
        &self.utilities
    }

    pub fn utility(&self, i: usize) -> &Utility {
        &self.utilities[i]
    }

    pub fn joint(&self) -> &JointErrorModel {
        &self.joint
    }

    pub fn pricing(&self) -> &PricingModel {
        &self.pricing
    }

    pub fn p_d(&self) -> f64 {
        self.p_d
    }

    pub fn d_total(&self) -> f64 {
        self.utilities.iter().map(|u| u.demand).sum()
    }

    /// Same market, different day-ahead price (the bidding-curve game
    /// evaluates the scalar game at each price node).
    pub fn with_p_d(&self, p_d: f64) -> Result<Self> {
        Self::new(self.utilities.clone(), self.joint.clone(), self.pricing.clone(), p_d)
    }

    /// Same market, different pricing rule (sensitivity sweeps).
    pub fn with_pricing(&self, pricing: PricingModel) -> Result<Self> {
        Self::new(self.utilities.clone(), self.joint.clone(), pricing, self.p_d)
    }
}

/// Bid deviations, one per utility: utility `i` bids `D_hat_i - mu_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyProfile(Vec<f64>);

impl StrategyProfile {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("strategy deviations must be finite"));
        }
        Ok(Self(mu))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.0
    }

    pub fn mu_i(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Aggregate deviation of everyone but `i`.
    pub fn mu_minus(&self, i: usize) -> f64 {
        self.0
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn mu_total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Copy with entry `i` replaced.
    pub fn with_mu(&self, i: usize, v: f64) -> Self {
        let mut out = self.0.clone();
        out[i] = v;
        Self(out)
    }
}

/// Which engine produced an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quadrature,
    ClosedFormCorrelated,
    MonteCarlo,
    TwoDQuadrature,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Quadrature => "quadrature",
            Method::ClosedFormCorrelated => "closed_form_correlated",
            Method::MonteCarlo => "monte_carlo",
            Method::TwoDQuadrature => "two_d_quadrature",
        };
        f.write_str(s)
    }
}

/// An expected-ABC value with its provenance. `std_error` is present
/// exactly for Monte Carlo; `n` counts samples or quadrature nodes.
#[derive(Clone, Debug, Serialize)]
pub struct CostEstimate {
    pub value: f64,
    pub method: Method,
    pub std_error: Option<f64>,
    pub n: u64,
    /// Diagnostics such as the degenerate perfect-correlation path.
    pub notes: Vec<String>,
}

impl CostEstimate {
    pub(crate) fn deterministic(value: f64, method: Method, n: u64) -> Self {
        debug_assert!(value >= 0.0, "ABC must be non-negative, got {value}");
        Self { value, method, std_error: None, n, notes: Vec::new() }
    }

    /// CSV header for estimate rows.
    pub fn csv_header() -> &'static str {
        "utility_id,mu_i,mu_minus_i,method,value,std_error,n"
    }

    /// One CSV row in the layout of [`Self::csv_header`].
    pub fn csv_row(&self, utility_id: &str, mu_i: f64, mu_minus_i: f64) -> String {
        let se = self.std_error.map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{utility_id},{mu_i},{mu_minus_i},{},{},{se},{}",
            self.method, self.value, self.n
        )
    }
}

/// Realized (single-draw) cost of one utility.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealizedCost {
    /// Total procurement cost ($).
    pub total: f64,
    /// Average buying cost ($/MWh).
    pub abc: f64,
}

/// Settles one realized error vector: every utility pays `p_d` for its
/// day-ahead quantity and the spot price for its mismatch.
pub fn realized_cost(
    scenario: &MarketScenario,
    profile: &StrategyProfile,
    eps: &[f64],
) -> Result<Vec<RealizedCost>> {
    let n = scenario.n();
    if profile.len() != n || eps.len() != n {
        return Err(Error::invalid(format!(
            "profile/error lengths must equal {n} utilities"
        )));
    }
    let p_d = scenario.p_d();
    let mut deltas = Vec::with_capacity(n);
    let mut delta_total = 0.0;
    for (i, e) in eps.iter().enumerate() {
        let d = profile.mu_i(i) - e;
        deltas.push(d);
        delta_total += d;
    }
    let p_s = scenario.pricing().spot_price(delta_total, p_d);
    Ok((0..n)
        .map(|i| {
            let d_i = scenario.utility(i).demand;
            let total = p_d * (d_i - deltas[i]) + p_s * deltas[i];
            RealizedCost { total, abc: total / d_i }
        })
        .collect())
}

/// Engine selector for the expectation dispatchers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Engine {
    Quadrature,
    ClosedForm,
    TwoD,
    MonteCarlo { n: u64, seed: u64 },
}

/// Picks the deterministic engine matching the scenario class:
/// quadrature for independent errors under symmetric pricing, the
/// closed form for correlated Gaussians, the tensor grid otherwise.
/// Correlated errors under asymmetric pricing have no deterministic
/// engine and must go through Monte Carlo explicitly.
pub fn auto_engine(scenario: &MarketScenario) -> Result<Engine> {
    if scenario.joint().is_independent() {
        if scenario.pricing().check_symmetric() {
            Ok(Engine::Quadrature)
        } else {
            Ok(Engine::TwoD)
        }
    } else if scenario.pricing().check_symmetric() {
        Ok(Engine::ClosedForm)
    } else {
        Err(Error::EngineMismatch(
            "correlated errors with asymmetric pricing: use Monte Carlo".into(),
        ))
    }
}

/// Expected ABC of utility `i` under the chosen engine.
pub fn expected_abc(
    scenario: &MarketScenario,
    profile: &StrategyProfile,
    i: usize,
    engine: Engine,
) -> Result<CostEstimate> {
    match engine {
        Engine::Quadrature => expected_abc_quadrature(scenario, profile, i),
        Engine::ClosedForm => expected_abc_closed_form(scenario, profile, i),
        Engine::TwoD => expected_abc_2d_quadrature(scenario, profile, i),
        Engine::MonteCarlo { n, seed } => expected_abc_mc(scenario, profile, i, n, seed),
    }
}

/// Expected market-level ABC. Depends on the profile only through the
/// total deviation.
pub fn expected_abc_total(
    scenario: &MarketScenario,
    profile: &StrategyProfile,
    engine: Engine,
) -> Result<CostEstimate> {
    match engine {
        Engine::MonteCarlo { n, seed } => expected_abc_total_mc(scenario, profile, n, seed),
        _ => expected_abc_total_quadrature(scenario, profile),
    }
}

/// Prepared per-(scenario, utility) cost function over `(mu_i, mu_minus)`.
/// Sweeps and searches evaluate many deviations against the same inner
/// state (grid-convolved CDFs, price tables), so build it once.
pub struct CostEvaluator {
    inner: EvalInner,
}

enum EvalInner {
    Quad(QuadContext),
    Closed(ClosedFormContext),
    TwoD(TwoDContext),
    Mc { scenario: MarketScenario, i: usize, n: u64, seed: u64 },
}

impl CostEvaluator {
    /// `mu_span` must bound `|mu_i| + |mu_minus|` over the evaluations
    /// this instance will serve (the tensor-grid engine sizes its price
    /// table from it; the others ignore it).
    pub fn new(
        scenario: &MarketScenario,
        i: usize,
        engine: Engine,
        mu_span: f64,
    ) -> Result<Self> {
        let inner = match engine {
            Engine::Quadrature => EvalInner::Quad(QuadContext::new(scenario, i)?),
            Engine::ClosedForm => EvalInner::Closed(ClosedFormContext::new(scenario, i)?),
            Engine::TwoD => EvalInner::TwoD(TwoDContext::new(scenario, i, mu_span)?),
            Engine::MonteCarlo { n, seed } => {
                if i >= scenario.n() {
                    return Err(Error::invalid(format!("utility index {i} out of range")));
                }
                EvalInner::Mc { scenario: scenario.clone(), i, n, seed }
            }
        };
        Ok(Self { inner })
    }

    /// Expected ABC at own deviation `mu_i` with the others' aggregate
    /// deviation `mu_minus`.
    pub fn eval(&self, mu_i: f64, mu_minus: f64) -> Result<CostEstimate> {
        match &self.inner {
            EvalInner::Quad(ctx) => ctx.eval(mu_i, mu_minus),
            EvalInner::Closed(ctx) => ctx.eval(mu_i, mu_minus),
            EvalInner::TwoD(ctx) => ctx.eval(mu_i, mu_minus),
            EvalInner::Mc { scenario, i, n, seed } => {
                // only the aggregate of the others matters; park it on the
                // first other utility
                let mut mu = vec![0.0; scenario.n()];
                mu[*i] = mu_i;
                if mu_minus != 0.0 {
                    let j = (0..scenario.n())
                        .find(|j| j != i)
                        .ok_or(Error::NoOtherUtilities)?;
                    mu[j] = mu_minus;
                }
                expected_abc_mc(scenario, &StrategyProfile::new(mu)?, *i, *n, *seed)
            }
        }
    }
}

/// Prepared market-level cost function over the total deviation.
pub struct TotalCostEvaluator {
    ctx: TotalContext,
}

impl TotalCostEvaluator {
    pub fn new(scenario: &MarketScenario) -> Result<Self> {
        Ok(Self { ctx: TotalContext::new(scenario)? })
    }

    pub fn eval(&self, mu_total: f64) -> Result<CostEstimate> {
        self.ctx.eval(mu_total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::ErrorModel;
    use approx::assert_relative_eq;

    pub(crate) fn gaussian_scenario(sigmas: &[f64], demands: &[f64], p_d: f64) -> MarketScenario {
        let marginals = sigmas.iter().map(|&s| ErrorModel::gaussian(s).unwrap()).collect();
        let joint = JointErrorModel::independent(marginals).unwrap();
        let utilities = demands
            .iter()
            .enumerate()
            .map(|(i, &d)| Utility { id: format!("u{i}"), demand: d })
            .collect();
        MarketScenario::new(utilities, joint, PricingModel::reference_symmetric(), p_d).unwrap()
    }

    #[test]
    fn zero_mismatch_costs_exactly_p_d() {
        let s = gaussian_scenario(&[30.0, 40.0], &[1000.0, 800.0], 35.0);
        let costs =
            realized_cost(&s, &StrategyProfile::zeros(2), &[0.0, 0.0]).unwrap();
        for c in costs {
            assert_relative_eq!(c.abc, 35.0);
        }
    }

    #[test]
    fn single_utility_hand_computed_cost() {
        let joint =
            JointErrorModel::independent(vec![ErrorModel::gaussian(38.7).unwrap()]).unwrap();
        let s = MarketScenario::new(
            vec![Utility { id: "maine".into(), demand: 1000.0 }],
            joint,
            PricingModel::reference_symmetric(),
            35.0,
        )
        .unwrap();
        // eps = -100 with mu = 0: short 100 MWh, bought at 55.223
        let costs = realized_cost(&s, &StrategyProfile::zeros(1), &[-100.0]).unwrap();
        assert_relative_eq!(costs[0].total, 37_022.3, epsilon = 1e-9);
        assert_relative_eq!(costs[0].abc, 37.0223, epsilon = 1e-12);
    }

    #[test]
    fn abc_invariant_under_rescaling() {
        // scaling demands and errors by c with slopes a/c leaves ABC alone
        let c = 7.5;
        let base = gaussian_scenario(&[30.0, 40.0], &[1000.0, 800.0], 35.0);
        let scaled_pricing =
            PricingModel::piecewise_linear(0.0034 / c, 0.0034 / c, 1.2378, 0.7622).unwrap();
        let scaled = MarketScenario::new(
            vec![
                Utility { id: "u0".into(), demand: 1000.0 * c },
                Utility { id: "u1".into(), demand: 800.0 * c },
            ],
            base.joint().clone(),
            scaled_pricing,
            35.0,
        )
        .unwrap();
        let profile = StrategyProfile::new(vec![20.0, -5.0]).unwrap();
        let scaled_profile = StrategyProfile::new(vec![20.0 * c, -5.0 * c]).unwrap();
        let eps = [12.0, -33.0];
        let scaled_eps = [12.0 * c, -33.0 * c];
        let a = realized_cost(&base, &profile, &eps).unwrap();
        let b = realized_cost(&scaled, &scaled_profile, &scaled_eps).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x.abc, y.abc, max_relative = 1e-12);
        }
    }

    #[test]
    fn profile_aggregates() {
        let p = StrategyProfile::new(vec![1.0, -2.0, 4.0]).unwrap();
        assert_relative_eq!(p.mu_total(), 3.0);
        assert_relative_eq!(p.mu_minus(0), 2.0);
        assert_relative_eq!(p.mu_minus(2), -1.0);
        assert_relative_eq!(p.mu_i(1), -2.0);
    }

    #[test]
    fn scenario_validation() {
        let joint =
            JointErrorModel::independent(vec![ErrorModel::gaussian(1.0).unwrap()]).unwrap();
        assert!(MarketScenario::new(
            vec![Utility { id: "u".into(), demand: -5.0 }],
            joint.clone(),
            PricingModel::reference_symmetric(),
            35.0
        )
        .is_err());
        assert!(MarketScenario::new(
            vec![Utility { id: "u".into(), demand: 5.0 }],
            joint,
            PricingModel::reference_symmetric(),
            0.0
        )
        .is_err());
    }
}
