//! End-to-end flow: hourly trace CSV -> error extraction -> scenario ->
//! symmetry diagnostics -> equilibrium verification, all on empirical
//! marginals.

use spotbid_core::cost::{CostEvaluator, Engine, StrategyProfile};
use spotbid_core::dataio::{build_scenario, ingest_traces, parse_scenario_config};
use spotbid_core::game::{fault_immunity_curve, verify_equilibrium, VerifyOptions};
use spotbid_core::uncertainty::{ks_symmetry_test, ErrorModel};
use std::io::Write;

fn synthesize_traces(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("loads.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "timestamp,utility_id,actual_mwh,predicted_mwh").unwrap();
    let specs = [("maine", 38.7, 1000.0), ("ct", 30.0, 1400.0), ("vt", 22.0, 600.0)];
    for (idx, (id, sigma, level)) in specs.iter().enumerate() {
        let noise = ErrorModel::gaussian(*sigma).unwrap().sample(2000, 100 + idx as u64);
        for (h, eps) in noise.iter().enumerate() {
            let day = h / 24;
            let hour = h % 24;
            let actual = level + ((h as f64) * 0.26).sin() * 0.1 * level;
            writeln!(
                f,
                "2011-{:02}-{:02}T{hour:02}:00:00,{id},{actual},{}",
                day / 28 + 1,
                day % 28 + 1,
                actual + eps
            )
            .unwrap();
        }
    }
    path
}

#[test]
fn trace_driven_market_verifies_the_prediction_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let traces = synthesize_traces(dir.path());

    let set = ingest_traces(&traces).unwrap();
    assert_eq!(set.len(), 3);
    assert_eq!(set.group("maine").unwrap().len(), 2000);

    let config = parse_scenario_config(&format!(
        r#"{{"utilities": [
            {{"id": "maine", "demand_mwh": 1000, "error": {{"kind": "trace", "path": "{name}", "utility_id": "maine"}}}},
            {{"id": "ct", "demand_mwh": 1400, "error": {{"kind": "trace", "path": "{name}", "utility_id": "ct"}}}},
            {{"id": "vt", "demand_mwh": 600, "error": {{"kind": "trace", "path": "{name}", "utility_id": "vt"}}}}
        ]}}"#,
        name = traces.file_name().unwrap().to_str().unwrap()
    ))
    .unwrap();
    let scenario = build_scenario(&config, dir.path()).unwrap();
    assert_eq!(scenario.n(), 3);

    // extracted errors look symmetric and roughly carry the noise scale
    for i in 0..3 {
        let model = scenario.joint().marginal(i);
        assert_eq!(model.kind_name(), "empirical");
        let ks = ks_symmetry_test(model.samples().unwrap()).unwrap();
        assert!(!ks.reject_at_5pct, "utility {i}: statistic {}", ks.statistic);
    }
    assert!((scenario.joint().marginal(0).sigma() - 38.7).abs() < 2.0);

    // bidding at prediction survives unilateral-deviation checks on the
    // empirical marginals; sampling skew keeps gains near but not at zero
    let report = verify_equilibrium(
        &scenario,
        &StrategyProfile::zeros(3),
        &VerifyOptions::new(Engine::Quadrature),
    )
    .unwrap();
    assert!(
        report.max_gain <= 2.0 * report.tol,
        "max gain {} vs tol {}",
        report.max_gain,
        report.tol
    );
    for br in &report.best_responses {
        assert!(br.mu_star.abs() < 10.0, "mu* = {}", br.mu_star);
    }

    // deviations by the other two utilities cannot hurt the rational one
    let curve = fault_immunity_curve(
        &scenario,
        &[1, 2],
        &[0.0, 50.0, 150.0],
        0,
        Engine::Quadrature,
    )
    .unwrap();
    assert!(curve[0].1.value > curve[1].1.value);
    assert!(curve[1].1.value > curve[2].1.value);

    // empirical marginals agree across the deterministic engines
    let quad = CostEvaluator::new(&scenario, 0, Engine::Quadrature, 30.0)
        .unwrap()
        .eval(20.0, 0.0)
        .unwrap()
        .value;
    let tensor = CostEvaluator::new(&scenario, 0, Engine::TwoD, 30.0)
        .unwrap()
        .eval(20.0, 0.0)
        .unwrap()
        .value;
    assert!((quad - tensor).abs() <= 1e-4 * 35.0, "{quad} vs {tensor}");
}
