//! Integration checks of the shipped scenario files (the fast ones; the
//! deep blob runs are exercised by the acceptance suite).

use std::path::{Path, PathBuf};

use linalign::experiments::{run_scenario, Scenario};

fn scenario(name: &str, out_tag: &str) -> Scenario {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut s = Scenario::parse_file(&root.join("scenarios").join(name)).unwrap();
    s.out_dir = std::env::temp_dir().join(format!(
        "linalign-scenarios-{}-{out_tag}",
        std::process::id()
    ));
    s
}

fn cleanup(dir: &PathBuf) {
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn fig2_circles_flow_aligns_adjacent_layers() {
    let s = scenario("fig2.scenario", "fig2");
    let outcome = run_scenario(&s).unwrap();
    let stats = outcome.flow_stats.as_ref().unwrap();
    assert!(stats.final_risk <= s.risk_floor);
    for (k, adj) in outcome.final_report.adjacent.iter().enumerate() {
        let a = adj.expect("adjacent alignment defined at stop");
        assert!(a >= 0.99, "adj_{} = {a}", k + 1);
    }
    let cos = outcome.final_report.cos_ubar.unwrap();
    assert!(cos >= 0.99, "cos_ubar = {cos}");
    // The conservation residual stays within the integrator budget.
    assert!(stats.max_conservation_residual <= 10.0 * s.tol * stats.final_time.max(1.0));
    cleanup(&s.out_dir);
}

#[test]
fn trap_scenario_is_a_negative_control() {
    let s = scenario("trap.scenario", "trap");
    let outcome = run_scenario(&s).unwrap();
    assert!(!outcome.init_check.is_pass());
    let stats = outcome.gd_stats.as_ref().unwrap();
    assert!(stats.final_risk >= 1.0 - 1e-12);
    cleanup(&s.out_dir);
}

#[test]
fn fig1_linear_baseline_finds_the_margin_direction() {
    let mut s = scenario("fig1_linear.scenario", "fig1lin");
    s.max_steps = 200_000;
    let outcome = run_scenario(&s).unwrap();
    let stats = outcome.gd_stats.as_ref().unwrap();
    assert!(
        stats.final_risk <= s.risk_floor,
        "risk {}",
        stats.final_risk
    );
    let cos = outcome.final_report.cos_ubar.unwrap();
    assert!(cos >= 0.99, "cos_ubar = {cos}");
    cleanup(&s.out_dir);
}
