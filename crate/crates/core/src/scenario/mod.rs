//! Scenario files, end-to-end runs, synthetic workloads and trace replay.

pub mod format;
pub mod replay;
pub mod runner;
pub mod workload;

pub use format::{parse, Scenario, ScenarioError};
pub use replay::{replay, ReplayError, TraceFile};
pub use runner::{compare_modes, run, Comparison, RunOptions, RunOutcome, RunReport};
pub use workload::{generate, WorkloadError, WorkloadParams};

pub const TASK_A: &str = include_str!("../../scenarios/task_a.scn");
pub const TASK_B: &str = include_str!("../../scenarios/task_b.scn");
pub const TASK_C: &str = include_str!("../../scenarios/task_c.scn");

/// Bundled scenarios by name.
pub fn bundled() -> [(&'static str, &'static str); 3] {
    [("task_a", TASK_A), ("task_b", TASK_B), ("task_c", TASK_C)]
}
