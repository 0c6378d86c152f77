//! Correlated-Gaussian cost engine under symmetric piecewise-linear
//! pricing.
//!
//! With jointly Gaussian mismatches, conditioning on `Delta_i` turns the
//! inner tail probability into an error function, leaving a quadratic
//! part extended by the cross term `rho_i * sigma_i * sigma_{-i}` and a
//! single 1-D expectation `E[Delta_i * erf(...)]`. Perfect correlation
//! (`rho_i = 1`) collapses `Delta_{-i}` onto a line and gets an exact
//! branch.

use super::{CostEstimate, MarketScenario, Method, StrategyProfile};
use crate::error::{Error, Result};
use crate::numeric::{erf, normal_pdf, std_normal_cdf, std_normal_pdf, KahanSum};
use crate::pricing::PricingModel;
use crate::uncertainty::SUPPORT_SIGMAS;

const BASE_NODES: usize = 4097;
const MAX_NODES: usize = 65_537;
const ABC_TOL_PD: f64 = 1e-6;
/// rho_i this close to 1 takes the perfectly-correlated branch.
const RHO_DEGENERATE: f64 = 1.0 - 1e-12;

pub(crate) struct ClosedFormContext {
    p_d: f64,
    demand: f64,
    a_avg: f64,
    gap: f64,
    sigma_i: f64,
    sigma_minus: f64,
    rho_i: f64,
}

impl ClosedFormContext {
    pub fn new(scenario: &MarketScenario, i: usize) -> Result<Self> {
        if i >= scenario.n() {
            return Err(Error::invalid(format!("utility index {i} out of range")));
        }
        if !scenario.pricing().check_symmetric() {
            return Err(Error::EngineMismatch(
                "closed form needs symmetric piecewise-linear pricing: use 2-D quadrature or MC"
                    .into(),
            ));
        }
        if let Some(bad) =
            scenario.joint().marginals().iter().find(|m| !m.is_gaussian())
        {
            return Err(Error::EngineMismatch(format!(
                "closed form needs Gaussian marginals, found {}",
                bad.kind_name()
            )));
        }
        let (sigma_minus, rho_i) = if scenario.n() == 1 {
            (0.0, 0.0)
        } else {
            // the aggregates used here (sigma_{-i}, rho_i) are strategy
            // independent; deviations enter only at evaluation time
            let zeros = vec![0.0; scenario.n()];
            let agg = scenario.joint().aggregate_others(i, &zeros)?;
            (agg.sigma_minus, agg.rho_i)
        };
        let (a1, a2, b1, b2) = match *scenario.pricing() {
            PricingModel::PiecewiseLinear { a1, a2, b1, b2 } => (a1, a2, b1, b2),
            PricingModel::GeneralOdd { .. } => unreachable!("check_symmetric is piecewise linear"),
        };
        Ok(Self {
            p_d: scenario.p_d(),
            demand: scenario.utility(i).demand,
            a_avg: 0.5 * (a1 + a2),
            gap: b1 - b2,
            sigma_i: scenario.joint().marginal(i).sigma(),
            sigma_minus,
            rho_i,
        })
    }

    pub fn eval(&self, mu_i: f64, mu_minus: f64) -> Result<CostEstimate> {
        let quad_term = self.a_avg
            * (self.sigma_i * self.sigma_i
                + mu_i * mu_i
                + mu_i * mu_minus
                + self.rho_i * self.sigma_i * self.sigma_minus);
        let scale = self.p_d / self.demand;

        if self.rho_i >= RHO_DEGENERATE && self.sigma_minus > 0.0 {
            // Delta_{-i} - mu_minus = (sigma_minus / sigma_i)(Delta_i - mu_i)
            // exactly; the market sign flips at a single Delta_i threshold.
            let k = self.sigma_i / (self.sigma_i + self.sigma_minus);
            let x = -k * (mu_i + mu_minus);
            let z = x / self.sigma_i;
            let w = self.sigma_i * std_normal_pdf(z) - mu_i * (std_normal_cdf(z) - 0.5);
            let value = self.p_d + scale * (quad_term + self.gap * w);
            let mut est =
                CostEstimate::deterministic(value, Method::ClosedFormCorrelated, 1);
            est.notes.push("degenerate perfect correlation (rho_i = 1)".into());
            return Ok(est);
        }

        let mut nodes = BASE_NODES;
        loop {
            let u_full = self.erf_expectation(mu_i, mu_minus, nodes);
            let u_half = self.erf_expectation(mu_i, mu_minus, (nodes - 1) / 2 + 1);
            let drift = (u_full - u_half).abs() * scale * 0.5 * self.gap;
            if drift < ABC_TOL_PD * self.p_d {
                let value = self.p_d + scale * (quad_term + 0.5 * self.gap * u_full);
                return Ok(CostEstimate::deterministic(
                    value,
                    Method::ClosedFormCorrelated,
                    nodes as u64,
                ));
            }
            if nodes >= MAX_NODES {
                return Err(Error::ToleranceNotMet(format!(
                    "erf expectation refinement stalled at {nodes} nodes"
                )));
            }
            nodes = (nodes - 1) * 2 + 1;
        }
    }

    /// `E[Delta_i * erf(A(Delta_i))]` over `Delta_i ~ N(mu_i, sigma_i^2)`.
    /// With no other randomness (`sigma_minus = 0`) the erf degenerates to
    /// the sign of the market mismatch.
    fn erf_expectation(&self, mu_i: f64, mu_minus: f64, nodes: usize) -> f64 {
        let denom = (2.0 * (1.0 - self.rho_i * self.rho_i)).sqrt();
        let half_width = SUPPORT_SIGMAS * self.sigma_i;
        let lo = mu_i - half_width;
        let step = 2.0 * half_width / (nodes - 1) as f64;
        let mut acc = KahanSum::default();
        for j in 0..nodes {
            let w = if j == 0 || j == nodes - 1 { 0.5 } else { 1.0 };
            let x = lo + j as f64 * step;
            let e = if self.sigma_minus > 0.0 {
                let a = ((x + mu_minus) / self.sigma_minus
                    + self.rho_i * (x - mu_i) / self.sigma_i)
                    / denom;
                erf(a)
            } else {
                (x + mu_minus).signum()
            };
            acc.add(w * x * e * normal_pdf(x - mu_i, self.sigma_i));
        }
        acc.value() * step
    }
}

/// Expected ABC of utility `i` for (possibly correlated) Gaussian errors
/// under symmetric piecewise-linear pricing.
pub fn expected_abc_closed_form(
    scenario: &MarketScenario,
    profile: &StrategyProfile,
    i: usize,
) -> Result<CostEstimate> {
    if profile.len() != scenario.n() {
        return Err(Error::invalid("profile length must match utility count"));
    }
    ClosedFormContext::new(scenario, i)?.eval(profile.mu_i(i), profile.mu_minus(i))
}
