use std::path::Path;

use mvdc_nmpc::{default_scenario, CaseConfig};

#[test]
fn shipped_scenario_matches_builtin_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml");
    let case = CaseConfig::load(&path).unwrap();
    assert_eq!(case, default_scenario());
    assert_eq!(case.scenario_hash(), default_scenario().scenario_hash());
}
