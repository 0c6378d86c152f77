//! Best responses, equilibrium verification, and the market experiments.
//!
//! The headline structural facts being exercised: bidding at prediction
//! is the unique equilibrium under symmetric pricing, it loses no
//! efficiency, and irrational deviations by any subset of utilities can
//! only lower the remaining utilities' expected costs.

use crate::cost::{
    CostEstimate, CostEvaluator, Engine, MarketScenario, Method, StrategyProfile,
    TotalCostEvaluator, Utility,
};
use crate::error::{Error, Result};
use crate::numeric::golden_section_min;
use crate::uncertainty::{ErrorModel, JointErrorModel};
use rayon::prelude::*;
use serde::Serialize;

/// Points in the coarse scan that precedes golden-section refinement.
const COARSE_POINTS: usize = 64;

/// Options for [`best_response`].
#[derive(Clone, Copy, Debug)]
pub struct BestResponseOptions {
    pub engine: Engine,
    /// Search bracket; defaults to +-5 (sigma_i + |mu_minus|).
    pub bracket: Option<(f64, f64)>,
    /// Certified localization width for the minimizer.
    pub tol: f64,
}

impl BestResponseOptions {
    pub fn quadrature(tol: f64) -> Self {
        Self { engine: Engine::Quadrature, bracket: None, tol }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BestResponseResult {
    pub mu_star: f64,
    pub cost_at_star: f64,
    pub bracket: (f64, f64),
    pub method: Method,
    /// Set when the coarse scan saw several local minima; the result is
    /// then the refined global grid minimum, without a unimodal certificate.
    pub non_unimodal: bool,
}

fn method_of(engine: Engine) -> Method {
    match engine {
        Engine::Quadrature => Method::Quadrature,
        Engine::ClosedForm => Method::ClosedFormCorrelated,
        Engine::TwoD => Method::TwoDQuadrature,
        Engine::MonteCarlo { .. } => Method::MonteCarlo,
    }
}

/// Minimizes utility `i`'s expected ABC over its own deviation, holding
/// the rest of the profile fixed: a 64-point coarse scan brackets the
/// minimum, golden-section refinement localizes it to `tol`. Under the
/// Monte Carlo engine every evaluation reuses the seed (common random
/// numbers), so the search objective stays deterministic.
pub fn best_response(
    scenario: &MarketScenario,
    profile: &StrategyProfile,
    i: usize,
    opts: &BestResponseOptions,
) -> Result<BestResponseResult> {
    if profile.len() != scenario.n() {
        return Err(Error::invalid("profile length must match utility count"));
    }
    if opts.tol <= 0.0 || opts.tol.is_nan() {
        return Err(Error::invalid("best-response tolerance must be positive"));
    }
    let mu_minus = profile.mu_minus(i);
    let (lo, hi) = match opts.bracket {
        Some((a, b)) if a < b => (a, b),
        Some(_) => return Err(Error::invalid("bracket must satisfy lo < hi")),
        None => {
            let w = 5.0 * (scenario.joint().marginal(i).sigma() + mu_minus.abs());
            let w = if w > 0.0 { w } else { 1.0 };
            (-w, w)
        }
    };
    let span = lo.abs().max(hi.abs()) + mu_minus.abs();
    let evaluator = CostEvaluator::new(scenario, i, opts.engine, span)?;
    let cost = |mu_i: f64| evaluator.eval(mu_i, mu_minus);

    let step = (hi - lo) / (COARSE_POINTS - 1) as f64;
    let mut values = Vec::with_capacity(COARSE_POINTS);
    for j in 0..COARSE_POINTS {
        values.push(cost(lo + j as f64 * step)?.value);
    }
    let mut best = 0usize;
    for j in 1..COARSE_POINTS {
        if values[j] < values[best] {
            best = j;
        }
    }
    let mut local_minima = 0;
    for j in 0..COARSE_POINTS {
        let left_up = j == 0 || values[j] < values[j - 1];
        let right_up = j == COARSE_POINTS - 1 || values[j] < values[j + 1];
        if left_up && right_up {
            local_minima += 1;
        }
    }
    let refine_lo = lo + best.saturating_sub(1) as f64 * step;
    let refine_hi = lo + (best + 1).min(COARSE_POINTS - 1) as f64 * step;
    let (mu_star, cost_at_star) = golden_section_min(
        |m| cost(m).map(|e| e.value).unwrap_or(f64::INFINITY),
        refine_lo,
        refine_hi,
        opts.tol,
        200,
    );
    debug_assert!(cost_at_star <= values[0] && cost_at_star <= values[COARSE_POINTS - 1]);
    Ok(BestResponseResult {
        mu_star,
        cost_at_star,
        bracket: (lo, hi),
        method: method_of(opts.engine),
        non_unimodal: local_minima > 1,
    })
}

/// Options for [`verify_equilibrium`].
#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub engine: Engine,
    /// Improvement threshold; `None` picks `1e-4 * p_d` for the
    /// deterministic engines and 3 standard errors for Monte Carlo.
    pub tol: Option<f64>,
    /// Grid over the total deviation used for the efficiency gap.
    pub efficiency_grid: (f64, f64, usize),
}

impl VerifyOptions {
    pub fn new(engine: Engine) -> Self {
        Self { engine, tol: None, efficiency_grid: (-200.0, 200.0, 81) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumReport {
    pub is_equilibrium: bool,
    /// Largest unilateral expected-cost reduction found ($/MWh).
    pub max_gain: f64,
    pub tol: f64,
    pub gains: Vec<f64>,
    pub best_responses: Vec<BestResponseResult>,
    /// Market-level cost at the profile minus its minimum over the grid.
    pub efficiency_gap: f64,
}

/// Checks whether any utility can unilaterally improve on `profile` by
/// more than the tolerance, and how far the profile sits from the
/// market-level optimum.
pub fn verify_equilibrium(
    scenario: &MarketScenario,
    profile: &StrategyProfile,
    opts: &VerifyOptions,
) -> Result<EquilibriumReport> {
    if profile.len() != scenario.n() {
        return Err(Error::invalid("profile length must match utility count"));
    }
    // per-utility searches are independent; results assemble in utility order
    let per_utility: Vec<(f64, Option<f64>, BestResponseResult)> = (0..scenario.n())
        .into_par_iter()
        .map(|i| {
            let br_opts =
                BestResponseOptions { engine: opts.engine, bracket: None, tol: 1e-3 };
            let br = best_response(scenario, profile, i, &br_opts)?;
            let at_profile = crate::cost::expected_abc(scenario, profile, i, opts.engine)?;
            Ok(((at_profile.value - br.cost_at_star).max(0.0), at_profile.std_error, br))
        })
        .collect::<Result<_>>()?;
    let mut gains = Vec::with_capacity(scenario.n());
    let mut best_responses = Vec::with_capacity(scenario.n());
    let mut mc_se_cap = 0.0f64;
    for (gain, se, br) in per_utility {
        if let Some(se) = se {
            mc_se_cap = mc_se_cap.max(se);
        }
        gains.push(gain);
        best_responses.push(br);
    }
    let tol = opts.tol.unwrap_or(match opts.engine {
        Engine::MonteCarlo { .. } => 3.0 * mc_se_cap,
        _ => 1e-4 * scenario.p_d(),
    });
    let max_gain = gains.iter().cloned().fold(0.0, f64::max);

    let (g_lo, g_hi, g_n) = opts.efficiency_grid;
    let total = TotalCostEvaluator::new(scenario)?;
    let at_profile_total = total.eval(profile.mu_total())?.value;
    let mut grid_min = f64::INFINITY;
    for j in 0..g_n {
        let mu = g_lo + (g_hi - g_lo) * j as f64 / (g_n - 1).max(1) as f64;
        grid_min = grid_min.min(total.eval(mu)?.value);
    }
    let efficiency_gap = (at_profile_total - grid_min).max(0.0);

    Ok(EquilibriumReport {
        is_equilibrium: max_gain <= tol,
        max_gain,
        tol,
        gains,
        best_responses,
        efficiency_gap,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MatrixRankReport {
    pub m: usize,
    pub determinant: f64,
    pub sign_positive: bool,
    pub full_rank: bool,
}

/// Builds the equilibrium self-consistency matrix from the best-response
/// ratios `alpha_i = mu_i* / mu_{-i}* in (-1, 0)` (unit diagonal, row
/// `i` filled with `-alpha_i` off the diagonal) and reports its
/// determinant sign via an LU factorization with partial pivoting.
/// A positive determinant certifies that no nonzero profile satisfies
/// the equilibrium conditions.
pub fn equilibrium_matrix_rank(alphas: &[f64]) -> Result<MatrixRankReport> {
    if alphas.is_empty() {
        return Err(Error::invalid("need at least one ratio"));
    }
    for &a in alphas {
        if !(a > -1.0 && a < 0.0) {
            return Err(Error::invalid(format!(
                "ratio {a} outside the open interval (-1, 0)"
            )));
        }
    }
    let m = alphas.len();
    let mut mat = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            mat[(i, j)] = if i == j { 1.0 } else { -alphas[i] };
        }
    }
    let determinant = mat.lu().determinant();
    Ok(MatrixRankReport {
        m,
        determinant,
        sign_positive: determinant > 0.0,
        full_rank: determinant > 0.0,
    })
}

/// Sweeps the aggregate deviation of a fault set `S` and reports the
/// expected ABC of a rational utility `j` (bidding zero) at each point.
/// The curve peaks at zero deviation.
pub fn fault_immunity_curve(
    scenario: &MarketScenario,
    fault_set: &[usize],
    mu_s_grid: &[f64],
    j: usize,
    engine: Engine,
) -> Result<Vec<(f64, CostEstimate)>> {
    if fault_set.is_empty() {
        return Err(Error::invalid("fault set must be nonempty"));
    }
    if fault_set.contains(&j) {
        return Err(Error::invalid("rational utility cannot be in the fault set"));
    }
    let n = scenario.n();
    if j >= n || fault_set.iter().any(|&k| k >= n) {
        return Err(Error::invalid("utility index out of range"));
    }
    let mut seen = vec![false; n];
    for &k in fault_set {
        if seen[k] {
            return Err(Error::invalid("fault set has duplicate members"));
        }
        seen[k] = true;
    }
    let mut out = Vec::with_capacity(mu_s_grid.len());
    for &mu_s in mu_s_grid {
        let mut mu = vec![0.0; n];
        for &k in fault_set {
            mu[k] = mu_s / fault_set.len() as f64;
        }
        let profile = StrategyProfile::new(mu)?;
        let est = crate::cost::expected_abc(scenario, &profile, j, engine)?;
        out.push((mu_s, est));
    }
    Ok(out)
}

/// How sub-utility error scales when a utility is split `k` ways.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Sub-loads carry 1/k of the parent error (sigma / k).
    Scaled,
    /// Independent re-forecasts per sub-load (sigma / sqrt(k)).
    Iid,
}

/// Splits every utility into `k` equal sub-utilities (demand D_i / k),
/// scaling each error marginal per `mode`. Only independent scenarios
/// split; sub-utilities are mutually independent.
pub fn market_split(scenario: &MarketScenario, k: usize, mode: SplitMode) -> Result<MarketScenario> {
    if !(2..=16).contains(&k) {
        return Err(Error::invalid(format!("split factor must be in 2..=16, got {k}")));
    }
    if !scenario.joint().is_independent() {
        return Err(Error::EngineMismatch(
            "market split is defined for independent scenarios".into(),
        ));
    }
    let factor = match mode {
        SplitMode::Scaled => k as f64,
        SplitMode::Iid => (k as f64).sqrt(),
    };
    let mut utilities = Vec::with_capacity(scenario.n() * k);
    let mut marginals = Vec::with_capacity(scenario.n() * k);
    for (u, m) in scenario.utilities().iter().zip(scenario.joint().marginals()) {
        for c in 1..=k {
            utilities.push(Utility {
                id: format!("{}_{c}", u.id),
                demand: u.demand / k as f64,
            });
            marginals.push(scale_model(m, factor)?);
        }
    }
    MarketScenario::new(
        utilities,
        JointErrorModel::independent(marginals)?,
        scenario.pricing().clone(),
        scenario.p_d(),
    )
}

fn scale_model(model: &ErrorModel, factor: f64) -> Result<ErrorModel> {
    if model.is_point_mass() {
        return ErrorModel::point_mass(0.0);
    }
    if let Some(samples) = model.samples() {
        return ErrorModel::empirical(samples.iter().map(|s| s / factor).collect());
    }
    match model.kind_name() {
        "gaussian" => ErrorModel::gaussian(model.sigma() / factor),
        "laplace" => ErrorModel::laplace(model.sigma() / std::f64::consts::SQRT_2 / factor),
        other => Err(Error::invalid(format!("cannot scale error model kind {other}"))),
    }
}
