use amagf_core::scenario::runtime::check_expectations;
use amagf_core::scenario::{worked_scenario, Runtime};

#[test]
fn worked_scenario_matches_reference_values() {
    let script = worked_scenario();
    let rt = Runtime::run(script.clone()).unwrap();
    let checks = check_expectations(&script, rt.log());
    for c in &checks {
        println!("{:>3} {:<6} expected {:<8} got {:<10} {}", c.at, c.field, c.expected, c.actual, if c.pass { "ok" } else { "FAIL" });
    }
    assert!(checks.iter().all(|c| c.pass));
}
