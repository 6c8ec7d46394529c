//! Scenario runner behind the `persuade` command: a config schema, the
//! dispatch to solvers and verifiers, and CSV/JSON emission.

pub mod config;
pub mod emit;
pub mod run;

pub use config::{load_config, parse_config, Scenario, ScenarioConfig};
pub use run::{manifest_path, run, Check, RunManifest, Verdict};
