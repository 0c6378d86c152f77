//! Cross-engine consistency: every deterministic engine is checked
//! against Monte Carlo, and the structural decompositions of the cost
//! against direct simulation.

use spotbid_core::cost::{
    expected_abc_closed_form, expected_abc_mc, expected_abc_quadrature, expected_abc_total,
    realized_cost, Engine, MarketScenario, StrategyProfile, Utility,
};
use spotbid_core::pricing::PricingModel;
use spotbid_core::uncertainty::{ErrorModel, JointErrorModel};

fn gaussian_market(sigmas: &[f64], demands: &[f64]) -> MarketScenario {
    let marginals = sigmas.iter().map(|&s| ErrorModel::gaussian(s).unwrap()).collect();
    let joint = JointErrorModel::independent(marginals).unwrap();
    let utilities = demands
        .iter()
        .enumerate()
        .map(|(i, &d)| Utility { id: format!("u{i}"), demand: d })
        .collect();
    MarketScenario::new(utilities, joint, PricingModel::reference_symmetric(), 35.0).unwrap()
}

#[test]
fn quadrature_matches_mc_on_the_two_gaussian_market() {
    let s = gaussian_market(&[30.0, 40.0], &[1000.0, 1000.0]);
    let p = StrategyProfile::zeros(2);
    let q = expected_abc_quadrature(&s, &p, 0).unwrap().value;
    let mc = expected_abc_mc(&s, &p, 0, 10_000_000, 42).unwrap();
    let z = (mc.value - q).abs() / mc.std_error.unwrap();
    assert!(z < 3.0, "z = {z}");
}

#[test]
fn closed_form_cross_term_matches_simulation() {
    // the correlated quadratic contribution a*(mu_i*mu_minus + rho_i*
    // sigma_i*sigma_minus) is exactly E[xi_1 Delta_i Delta_minus]/p_d;
    // simulate the correlated pair and compare within 3 SE
    let rho = 0.5;
    let (s1, s2) = (2.0f64, 3.0f64);
    let (mu1, mu2) = (5.0f64, -3.0f64);
    let joint = JointErrorModel::correlated(
        vec![ErrorModel::gaussian(s1).unwrap(), ErrorModel::gaussian(s2).unwrap()],
        &[vec![1.0, rho], vec![rho, 1.0]],
    )
    .unwrap();
    let n = 4_000_000usize;
    let draws = joint.sample(n, 9);
    let a = 0.0034;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in 0..n {
        let d1 = mu1 - draws[2 * r];
        let d2 = mu2 - draws[2 * r + 1];
        // xi_1 = a * p_d off the origin for the symmetric rule; work in
        // units of p_d
        let term = a * d1 * (d1 + d2) - a * d1 * d1;
        sum += term;
        sum_sq += term * term;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    let predicted = a * (mu1 * mu2 + rho * s1 * s2);
    let z = (mean - predicted).abs() / se;
    assert!(z < 3.0, "z = {z}: {mean} vs {predicted}");
}

#[test]
fn closed_form_matches_mc_under_correlation() {
    let rows = vec![vec![1.0, 0.3, 0.3], vec![0.3, 1.0, 0.3], vec![0.3, 0.3, 1.0]];
    let joint = JointErrorModel::correlated(
        vec![
            ErrorModel::gaussian(38.7).unwrap(),
            ErrorModel::gaussian(30.0).unwrap(),
            ErrorModel::gaussian(45.0).unwrap(),
        ],
        &rows,
    )
    .unwrap();
    let s = MarketScenario::new(
        vec![
            Utility { id: "a".into(), demand: 1000.0 },
            Utility { id: "b".into(), demand: 900.0 },
            Utility { id: "c".into(), demand: 1100.0 },
        ],
        joint,
        PricingModel::reference_symmetric(),
        35.0,
    )
    .unwrap();
    for p in [StrategyProfile::zeros(3), StrategyProfile::new(vec![25.0, -10.0, 0.0]).unwrap()] {
        let cf = expected_abc_closed_form(&s, &p, 0).unwrap().value;
        let mc = expected_abc_mc(&s, &p, 0, 4_000_000, 17).unwrap();
        let z = (mc.value - cf).abs() / mc.std_error.unwrap();
        assert!(z < 3.0, "z = {z}");
    }
}

#[test]
fn total_engine_matches_mc() {
    let s = gaussian_market(&[30.0, 40.0, 25.0], &[1000.0, 800.0, 1200.0]);
    let p = StrategyProfile::new(vec![20.0, 0.0, -5.0]).unwrap();
    let det = expected_abc_total(&s, &p, Engine::Quadrature).unwrap().value;
    let mc = expected_abc_total(&s, &p, Engine::MonteCarlo { n: 4_000_000, seed: 5 }).unwrap();
    let z = (mc.value - det).abs() / mc.std_error.unwrap();
    assert!(z < 3.0, "z = {z}");
}

#[test]
fn laplace_marginals_agree_between_quadrature_and_mc() {
    let joint = JointErrorModel::independent(vec![
        ErrorModel::laplace(20.0).unwrap(),
        ErrorModel::gaussian(35.0).unwrap(),
    ])
    .unwrap();
    let s = MarketScenario::new(
        vec![
            Utility { id: "a".into(), demand: 1000.0 },
            Utility { id: "b".into(), demand: 1000.0 },
        ],
        joint,
        PricingModel::reference_symmetric(),
        35.0,
    )
    .unwrap();
    let p = StrategyProfile::new(vec![12.0, -30.0]).unwrap();
    let q = expected_abc_quadrature(&s, &p, 0).unwrap().value;
    let mc = expected_abc_mc(&s, &p, 0, 4_000_000, 23).unwrap();
    let z = (mc.value - q).abs() / mc.std_error.unwrap();
    assert!(z < 3.0, "z = {z}");
}

#[test]
fn empirical_marginals_agree_between_quadrature_and_mc() {
    // resampling uses the raw samples while quadrature uses the 256-bin
    // histogram; for dense samples the two stay within Monte Carlo noise
    let base = ErrorModel::gaussian(38.7).unwrap();
    let samples = base.sample(20_000, 31);
    let joint = JointErrorModel::independent(vec![
        ErrorModel::empirical(samples).unwrap(),
        ErrorModel::gaussian(30.0).unwrap(),
    ])
    .unwrap();
    let s = MarketScenario::new(
        vec![
            Utility { id: "a".into(), demand: 1000.0 },
            Utility { id: "b".into(), demand: 1000.0 },
        ],
        joint,
        PricingModel::reference_symmetric(),
        35.0,
    )
    .unwrap();
    let p = StrategyProfile::new(vec![15.0, 0.0]).unwrap();
    let q = expected_abc_quadrature(&s, &p, 0).unwrap().value;
    let mc = expected_abc_mc(&s, &p, 0, 4_000_000, 37).unwrap();
    let z = (mc.value - q).abs() / mc.std_error.unwrap();
    assert!(z < 3.5, "z = {z}");
}

#[test]
fn realized_cost_average_converges_to_engine_value() {
    // averaging realized settlements over sampled error vectors is the
    // definition the engines approximate
    let s = gaussian_market(&[30.0, 40.0], &[1000.0, 1000.0]);
    let p = StrategyProfile::new(vec![10.0, -20.0]).unwrap();
    let n = 300_000;
    let draws = s.joint().sample(n, 3);
    let mut mean = 0.0;
    for r in 0..n {
        let eps = &draws[2 * r..2 * r + 2];
        let costs = realized_cost(&s, &p, eps).unwrap();
        mean += costs[0].abc;
    }
    mean /= n as f64;
    let q = expected_abc_quadrature(&s, &p, 0).unwrap().value;
    assert!((mean - q).abs() < 0.01, "{mean} vs {q}");
}
