use std::path::Path;

use cstag::corpus::SynthConfig;
use cstag::experiment::{parse_toml_with_overrides, Condition, ExperimentConfig};

fn shipped(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(path).expect("shipped config")
}

#[test]
fn example_experiment_config_is_valid() {
    let config = ExperimentConfig::from_toml(&shipped("experiment.toml"), &[]).unwrap();
    config.validate().unwrap();
    assert_eq!(config.experiment.condition, Condition::PseudoCs);
    assert_eq!(config.experiment.seeds, vec![1, 2, 3, 4, 5]);
}

#[test]
fn example_synthetic_config_parses() {
    let config: SynthConfig = parse_toml_with_overrides(&shipped("synthetic.toml"), &[]).unwrap();
    assert_eq!(config.lexicon_sizes, [10_000, 10_000]);
    assert_eq!(config.templates.len(), 16);
}
