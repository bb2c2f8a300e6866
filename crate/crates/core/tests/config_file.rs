use koopman_adapt::harness::ExperimentConfig;

#[test]
fn shipped_default_config_matches_builtin() {
    let text = include_str!("../../../configs/default.toml");
    let parsed = ExperimentConfig::parse(text).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
}
