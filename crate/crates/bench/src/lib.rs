//! Shared fixtures for the benchmark suite.

use mselect_core::ecm::FitConfig;
use mselect_core::sim::{generate, scenario1, GeneratedData, Scenario};

/// Scenario-1 data at the given size and a 10% missing-rate target.
pub fn scenario1_data(n: usize, seed: u64) -> (Scenario, GeneratedData) {
    let sc = scenario1().with_n(n).with_missing_rate(0.1);
    let gen = generate(&sc, seed).expect("generation succeeds");
    (sc, gen)
}

/// Default estimation settings with a fixed seed.
pub fn config(seed: u64) -> FitConfig {
    FitConfig::with_seed(seed)
}
