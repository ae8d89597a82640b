#![allow(dead_code)]

use std::path::Path;

use puppet::scenario::{parse_scenario, Scenario};
use puppet::{run_scenario, RunOutput};
use puppet_core::RobotModel;

pub fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

pub fn scenario(src: &str) -> (Scenario, RobotModel) {
    parse_scenario(src, manifest_dir()).unwrap_or_else(|e| panic!("{e}"))
}

pub fn run(src: &str) -> RunOutput {
    let (s, m) = scenario(src);
    run_scenario(&s, &m).unwrap()
}

pub fn run_file(name: &str) -> RunOutput {
    let (s, m) = puppet::load_scenario(&manifest_dir().join("scenarios").join(name)).unwrap();
    run_scenario(&s, &m).unwrap()
}

pub fn max_delta(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
