//! Shared fixtures for the criterion benchmarks.

use crqos_core::oracle::{random_single_instance, CspInstance, SingleFamily};
use crqos_core::radio::{generate_scenario, Mode, Scenario, ScenarioParams};

/// A mid-sized satisfiable search instance.
pub fn search_instance() -> CspInstance {
    // Seed picked for a satisfiable instance with some backtracking.
    random_single_instance(
        7,
        SingleFamily {
            agents: (6, 6),
            domain_size: (4, 4),
            density: 0.6,
            tightness: 0.3,
        },
    )
}

/// The deployment family used by the sweep presets.
pub fn bench_params() -> ScenarioParams {
    ScenarioParams {
        area_side_m: 800.0,
        pair_dist_m: (10.0, 25.0),
        noise_floor_mw: 1e-9,
        pu_ambient_mw: 1e-9,
        sinr_range: (0.5, 1.5),
        pu_cap_range_mw: (3e-8, 3e-8),
        ..ScenarioParams::default()
    }
}

pub fn cdma_scenario(n_cr: usize) -> Scenario {
    generate_scenario(42, n_cr, 2, Mode::CdmaEqualRate, &bench_params()).expect("valid scenario")
}

pub fn stdma_scenario(n_cr: usize) -> Scenario {
    generate_scenario(42, n_cr, 2, Mode::Stdma, &bench_params()).expect("valid scenario")
}
