//! Synthetic benchmarks, the experiment runner and result files.

pub mod config;
pub mod output;
pub mod rl;
pub mod runner;
pub mod tasksets;

pub use config::{Algorithm, ExperimentConfig, ALGORITHMS};
pub use output::{IterationRecord, RunResult, Summary};
pub use runner::{run_experiment, RunOptions};
pub use tasksets::{get_tasksets, list_tasksets, TasksetBundle, TASKSETS};

/// Text printed by `metalearn list`.
pub fn registry_listing() -> String {
    let mut out = String::from("tasksets:\n");
    for t in TASKSETS {
        out.push_str(&format!("  {t}\n"));
    }
    out.push_str("algorithms:\n");
    for a in ALGORITHMS {
        out.push_str(&format!("  {a}\n"));
    }
    out
}
