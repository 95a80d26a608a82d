//! Shared fixtures for the criterion benches.

use handoff_core::scenario::{self, Scenario, WorkloadParams};

/// Generated workload with `n_inputs` inputs and default ratios.
pub fn workload(n_inputs: usize) -> Scenario {
    scenario::generate(&WorkloadParams {
        n_inputs,
        ..WorkloadParams::default()
    })
    .expect("default ratios are feasible")
    .into_scenario()
    .expect("generated scenarios parse")
}
