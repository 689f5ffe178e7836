//! Fixtures shared by the benchmarks.

use gfra_core::harness::draw_trial;
use gfra_core::{Scenario, ScenarioConfig};

/// Trial 0 of the reference configuration with `k` devices, `l` pilot
/// symbols and the given SNR.
pub fn fixture(k: usize, l: usize, snr_db: f64) -> Scenario {
    let cfg = ScenarioConfig {
        k,
        l,
        snr_db,
        ..ScenarioConfig::default()
    };
    draw_trial(&cfg, 0, 0)
        .expect("valid configuration")
        .scenario
}
