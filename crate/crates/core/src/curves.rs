//! Bidding-curve extension: strategies indexed by the day-ahead price.
//!
//! When the clearing price is uncertain, utilities submit (price,
//! quantity) pairs. Curves here are piecewise-constant on the price
//! belief's grid, and the curve game's cost is the belief-weighted sum of
//! scalar-game costs at each price node. Deviation checks run over a
//! finite family of candidate curves.

use crate::cost::{expected_abc, expected_abc_total, CostEstimate, Engine, MarketScenario, Method, StrategyProfile};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Piecewise-constant, right-continuous deviation schedule `mu_i(p_d)`.
/// Left of the first breakpoint the first value extends.
#[derive(Clone, Debug, PartialEq)]
pub struct BiddingCurve {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl BiddingCurve {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::invalid(
                "curve needs equally many breakpoints and values, at least one of each",
            ));
        }
        if breakpoints.iter().any(|p| *p <= 0.0 || !p.is_finite()) {
            return Err(Error::invalid("curve breakpoints must be positive"));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("curve breakpoints must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve values must be finite"));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Self {
        Self { breakpoints: vec![1.0], values: vec![value] }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, p_d: f64) -> f64 {
        match self.breakpoints.partition_point(|b| *b <= p_d) {
            0 => self.values[0],
            k => self.values[k - 1],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Discrete belief over the day-ahead price.
#[derive(Clone, Debug, Serialize)]
pub struct PriceBelief {
    prices: Vec<f64>,
    masses: Vec<f64>,
}

impl PriceBelief {
    pub fn new(prices: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if prices.is_empty() || prices.len() != masses.len() {
            return Err(Error::invalid("belief needs equally many prices and masses"));
        }
        if prices.iter().any(|p| *p <= 0.0 || !p.is_finite()) {
            return Err(Error::invalid("belief prices must be positive"));
        }
        if prices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("belief prices must be strictly increasing"));
        }
        if masses.iter().any(|m| *m < 0.0 || !m.is_finite()) {
            return Err(Error::invalid("belief masses must be non-negative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("belief masses sum to {total}, need 1")));
        }
        Ok(Self { prices, masses })
    }

    pub fn degenerate(p_d: f64) -> Result<Self> {
        Self::new(vec![p_d], vec![1.0])
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Belief-weighted expected ABC of utility `i` when every utility plays
/// its bidding curve. The scalar engine runs once per price node.
pub fn expected_curve_cost(
    scenario: &MarketScenario,
    curves: &[BiddingCurve],
    belief: &PriceBelief,
    i: usize,
    engine: Engine,
) -> Result<CostEstimate> {
    expected_curve_cost_flex(scenario, curves, None, belief, i, engine)
}

/// Curve-game cost with optional price-responsive demand: when demand
/// schedules are given, each price node settles against `D_i(p_d)`
/// instead of the scenario's fixed net loads.
pub fn expected_curve_cost_flex(
    scenario: &MarketScenario,
    curves: &[BiddingCurve],
    demand_curves: Option<&[BiddingCurve]>,
    belief: &PriceBelief,
    i: usize,
    engine: Engine,
) -> Result<CostEstimate> {
    if curves.len() != scenario.n() {
        return Err(Error::invalid("one curve per utility required"));
    }
    if let Some(d) = demand_curves {
        if d.len() != scenario.n() {
            return Err(Error::invalid("one demand schedule per utility required"));
        }
    }
    if i >= scenario.n() {
        return Err(Error::invalid(format!("utility index {i} out of range")));
    }
    // price nodes are independent scalar games; evaluate them
    // concurrently and reduce in grid order
    let estimates: Vec<CostEstimate> = belief
        .prices()
        .par_iter()
        .map(|&p| {
            let node = scenario_at_price(scenario, demand_curves, p)?;
            let mu: Vec<f64> = curves.iter().map(|c| c.eval(p)).collect();
            expected_abc(&node, &StrategyProfile::new(mu)?, i, engine)
        })
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut var = 0.0;
    let mut n = 0u64;
    let mut method = Method::Quadrature;
    for (est, &mass) in estimates.iter().zip(belief.masses()) {
        value += mass * est.value;
        if let Some(se) = est.std_error {
            var += (mass * se) * (mass * se);
        }
        n += est.n;
        method = est.method;
    }
    let std_error = match engine {
        Engine::MonteCarlo { .. } => Some(var.sqrt()),
        _ => None,
    };
    Ok(CostEstimate { value, method, std_error, n, notes: Vec::new() })
}

fn scenario_at_price(
    scenario: &MarketScenario,
    demand_curves: Option<&[BiddingCurve]>,
    p_d: f64,
) -> Result<MarketScenario> {
    let node = scenario.with_p_d(p_d)?;
    match demand_curves {
        None => Ok(node),
        Some(schedules) => {
            let utilities = node
                .utilities()
                .iter()
                .zip(schedules)
                .map(|(u, d)| crate::cost::Utility { id: u.id.clone(), demand: d.eval(p_d) })
                .collect();
            MarketScenario::new(
                utilities,
                node.joint().clone(),
                node.pricing().clone(),
                p_d,
            )
        }
    }
}

/// Belief-weighted market-level cost when the aggregate deviation
/// follows `aggregate` across prices.
pub fn expected_curve_cost_total(
    scenario: &MarketScenario,
    aggregate: &BiddingCurve,
    belief: &PriceBelief,
    engine: Engine,
) -> Result<f64> {
    let mut value = 0.0;
    for (&p, &mass) in belief.prices().iter().zip(belief.masses()) {
        let node = scenario.with_p_d(p)?;
        let mut mu = vec![0.0; scenario.n()];
        mu[0] = aggregate.eval(p);
        let est = expected_abc_total(&node, &StrategyProfile::new(mu)?, engine)?;
        value += mass * est.value;
    }
    Ok(value)
}

/// One-segment bumps on each price interval of the belief grid: the
/// canonical finite deviation family.
pub fn bump_family(belief: &PriceBelief, magnitudes: &[f64]) -> Vec<BiddingCurve> {
    let prices = belief.prices();
    let mut out = Vec::with_capacity(prices.len() * magnitudes.len());
    for seg in 0..prices.len() {
        for &m in magnitudes {
            let values: Vec<f64> =
                (0..prices.len()).map(|j| if j == seg { m } else { 0.0 }).collect();
            out.push(BiddingCurve::new(prices.to_vec(), values).expect("belief grid is valid"));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveEquilibriumReport {
    pub no_profitable_deviation: bool,
    /// Largest cost reduction any utility achieves with any candidate.
    pub max_gain: f64,
    /// (utility, candidate) achieving `max_gain`, if positive.
    pub worst_case: Option<(usize, usize)>,
    /// The zero aggregate also minimizes the social cost over the family.
    pub social_minimum_at_zero: bool,
    pub max_social_gain: f64,
    pub tol: f64,
}

/// Verifies that the all-zero curve profile beats every candidate
/// deviation for every utility, and that the zero aggregate minimizes
/// the belief-weighted social cost over the same family.
pub fn verify_curve_equilibrium(
    scenario: &MarketScenario,
    belief: &PriceBelief,
    candidates: &[BiddingCurve],
    engine: Engine,
    tol: f64,
) -> Result<CurveEquilibriumReport> {
    if candidates.is_empty() {
        return Err(Error::invalid("need at least one candidate deviation"));
    }
    let zeros: Vec<BiddingCurve> = (0..scenario.n()).map(|_| BiddingCurve::zero()).collect();
    let mut max_gain = f64::NEG_INFINITY;
    let mut worst_case = None;
    for i in 0..scenario.n() {
        let base = expected_curve_cost(scenario, &zeros, belief, i, engine)?.value;
        let mut curves = zeros.clone();
        for (c_idx, cand) in candidates.iter().enumerate() {
            curves[i] = cand.clone();
            let dev = expected_curve_cost(scenario, &curves, belief, i, engine)?.value;
            let gain = base - dev;
            if gain > max_gain {
                max_gain = gain;
                worst_case = Some((i, c_idx));
            }
        }
    }
    let base_total =
        expected_curve_cost_total(scenario, &BiddingCurve::zero(), belief, engine)?;
    let mut max_social_gain = f64::NEG_INFINITY;
    for cand in candidates {
        let dev = expected_curve_cost_total(scenario, cand, belief, engine)?;
        max_social_gain = max_social_gain.max(base_total - dev);
    }
    let no_profitable_deviation = max_gain <= tol;
    Ok(CurveEquilibriumReport {
        no_profitable_deviation,
        max_gain,
        worst_case: if max_gain > tol { worst_case } else { None },
        social_minimum_at_zero: max_social_gain <= tol,
        max_social_gain,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{expected_abc_quadrature, Utility};
    use crate::pricing::PricingModel;
    use crate::uncertainty::{ErrorModel, JointErrorModel};
    use approx::assert_relative_eq;

    fn scenario(sigmas: &[f64]) -> MarketScenario {
        let marginals = sigmas.iter().map(|&s| ErrorModel::gaussian(s).unwrap()).collect();
        let joint = JointErrorModel::independent(marginals).unwrap();
        let utilities = (0..sigmas.len())
            .map(|i| Utility { id: format!("u{i}"), demand: 1000.0 })
            .collect();
        MarketScenario::new(utilities, joint, PricingModel::reference_symmetric(), 35.0).unwrap()
    }

    #[test]
    fn curve_eval_is_right_continuous() {
        let c = BiddingCurve::new(vec![20.0, 30.0, 40.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.eval(10.0), 1.0);
        assert_eq!(c.eval(20.0), 1.0);
        assert_eq!(c.eval(29.999), 1.0);
        assert_eq!(c.eval(30.0), 2.0);
        assert_eq!(c.eval(1000.0), 3.0);
    }

    #[test]
    fn degenerate_belief_reduces_to_scalar_game() {
        let s = scenario(&[30.0, 40.0]);
        let belief = PriceBelief::degenerate(35.0).unwrap();
        let curves = vec![BiddingCurve::zero(), BiddingCurve::zero()];
        let c = expected_curve_cost(&s, &curves, &belief, 0, Engine::Quadrature).unwrap();
        let scalar = expected_abc_quadrature(&s, &StrategyProfile::zeros(2), 0).unwrap();
        assert_relative_eq!(c.value, scalar.value, epsilon = 1e-12);
    }

    #[test]
    fn two_point_belief_averages_the_scalar_values() {
        let s = scenario(&[30.0, 40.0]);
        let belief = PriceBelief::new(vec![30.0, 40.0], vec![0.5, 0.5]).unwrap();
        let curves = vec![BiddingCurve::zero(), BiddingCurve::zero()];
        let c = expected_curve_cost(&s, &curves, &belief, 0, Engine::Quadrature).unwrap();
        let lo = expected_abc_quadrature(
            &s.with_p_d(30.0).unwrap(),
            &StrategyProfile::zeros(2),
            0,
        )
        .unwrap();
        let hi = expected_abc_quadrature(
            &s.with_p_d(40.0).unwrap(),
            &StrategyProfile::zeros(2),
            0,
        )
        .unwrap();
        assert_relative_eq!(c.value, 0.5 * (lo.value + hi.value), epsilon = 1e-12);
    }

    #[test]
    fn constant_curve_matches_belief_average_of_scalar_game() {
        let s = scenario(&[30.0, 40.0]);
        let belief =
            PriceBelief::new(vec![25.0, 35.0, 45.0], vec![0.25, 0.5, 0.25]).unwrap();
        let mu_c = 17.0;
        let curves = vec![BiddingCurve::constant(mu_c), BiddingCurve::zero()];
        let c = expected_curve_cost(&s, &curves, &belief, 0, Engine::Quadrature).unwrap();
        let mut manual = 0.0;
        for (&p, &m) in belief.prices().iter().zip(belief.masses()) {
            let v = expected_abc_quadrature(
                &s.with_p_d(p).unwrap(),
                &StrategyProfile::new(vec![mu_c, 0.0]).unwrap(),
                0,
            )
            .unwrap()
            .value;
            manual += m * v;
        }
        assert_relative_eq!(c.value, manual, epsilon = 1e-9);
    }

    #[test]
    fn zero_curves_beat_bump_deviations() {
        let s = scenario(&[30.0, 40.0]);
        let belief =
            PriceBelief::new(vec![25.0, 30.0, 35.0, 40.0, 45.0], vec![0.2; 5]).unwrap();
        let family = bump_family(&belief, &[25.0, -25.0]);
        assert_eq!(family.len(), 10);
        let report =
            verify_curve_equilibrium(&s, &belief, &family, Engine::Quadrature, 1e-4 * 35.0)
                .unwrap();
        assert!(report.no_profitable_deviation, "max gain {}", report.max_gain);
        assert!(report.social_minimum_at_zero);
        assert!(report.max_gain < 0.0, "deviations must strictly lose");
    }

    #[test]
    fn pointwise_dominance_orders_costs() {
        let s = scenario(&[30.0, 40.0]);
        let belief =
            PriceBelief::new(vec![25.0, 35.0, 45.0], vec![0.3, 0.4, 0.3]).unwrap();
        let small = BiddingCurve::new(vec![25.0, 35.0, 45.0], vec![0.0, 20.0, 0.0]).unwrap();
        let large = BiddingCurve::new(vec![25.0, 35.0, 45.0], vec![0.0, 40.0, 10.0]).unwrap();
        let zeros = vec![BiddingCurve::zero(), BiddingCurve::zero()];
        let mut with_small = zeros.clone();
        with_small[0] = small;
        let mut with_large = zeros;
        with_large[0] = large;
        let c_small =
            expected_curve_cost(&s, &with_small, &belief, 0, Engine::Quadrature).unwrap();
        let c_large =
            expected_curve_cost(&s, &with_large, &belief, 0, Engine::Quadrature).unwrap();
        assert!(c_large.value > c_small.value);
    }

    #[test]
    fn fault_bump_on_others_lowers_rational_cost() {
        let s = scenario(&[30.0, 40.0, 35.0]);
        let belief = PriceBelief::new(vec![30.0, 40.0], vec![0.5, 0.5]).unwrap();
        let zeros: Vec<BiddingCurve> = (0..3).map(|_| BiddingCurve::zero()).collect();
        let base = expected_curve_cost(&s, &zeros, &belief, 0, Engine::Quadrature).unwrap();
        let mut last = base.value;
        for bump in [40.0, 80.0] {
            let mut curves = zeros.clone();
            curves[1] = BiddingCurve::constant(bump);
            let v = expected_curve_cost(&s, &curves, &belief, 0, Engine::Quadrature)
                .unwrap()
                .value;
            assert!(v < last, "bump {bump}: {v} !< {last}");
            last = v;
        }
    }

    #[test]
    fn flexible_demand_keeps_the_zero_curve_optimal() {
        // demand reacting to price does not create a profitable deviation
        // when bids track the (flexible) prediction
        let s = scenario(&[30.0, 40.0]);
        let belief = PriceBelief::new(vec![28.0, 36.0, 44.0], vec![0.3, 0.4, 0.3]).unwrap();
        let demand = vec![
            BiddingCurve::new(vec![28.0, 36.0, 44.0], vec![1200.0, 1000.0, 900.0]).unwrap(),
            BiddingCurve::new(vec![28.0, 36.0, 44.0], vec![1100.0, 950.0, 850.0]).unwrap(),
        ];
        let zeros = vec![BiddingCurve::zero(), BiddingCurve::zero()];
        let base = expected_curve_cost_flex(
            &s,
            &zeros,
            Some(&demand),
            &belief,
            0,
            Engine::Quadrature,
        )
        .unwrap()
        .value;
        for bump in [25.0, -25.0, 60.0] {
            let mut curves = zeros.clone();
            curves[0] = BiddingCurve::constant(bump);
            let v = expected_curve_cost_flex(
                &s,
                &curves,
                Some(&demand),
                &belief,
                0,
                Engine::Quadrature,
            )
            .unwrap()
            .value;
            assert!(v > base, "bump {bump}: {v} <= {base}");
        }
    }

    #[test]
    fn belief_validation() {
        assert!(PriceBelief::new(vec![10.0, 5.0], vec![0.5, 0.5]).is_err());
        assert!(PriceBelief::new(vec![10.0, 20.0], vec![0.6, 0.6]).is_err());
        assert!(PriceBelief::new(vec![-1.0], vec![1.0]).is_err());
        assert!(BiddingCurve::new(vec![10.0, 10.0], vec![0.0, 1.0]).is_err());
    }
}
