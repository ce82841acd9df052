//! Shared inputs for the benchmarks.

use mixfdr::sim::{generate, ScenarioId, ScenarioSpec};
use mixfdr::RawData;

/// Scenario 1 data with ten exposures.
pub fn scenario_one(n: usize, seed: u64) -> RawData {
    generate(&ScenarioSpec::new(ScenarioId::S1, n, 10), seed).expect("valid scenario").0
}
