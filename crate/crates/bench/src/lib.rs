//! Benchmark harness for the planar blending experiments: configuration,
//! episode execution (sync and latency-modelled async), sweeps, traces and plots.

pub mod config;
pub mod episode;
pub mod plot;
pub mod suite;
pub mod trace;
pub mod wallclock;

pub use config::{ConfigError, ModeKind, RunConfig};
pub use episode::{run_episode, Controller, ControllerKind, EpisodeRecord, ExecutionMode};
pub use suite::{run_speed_ablation, run_suite, Cell, SuiteRow};
