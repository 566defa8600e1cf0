//! File formats, experiment configs, output writers and the `pipescale`
//! command line for the `pipescale-core` planner and simulator.
//!
//! - [`io`]: pipeline, cluster and trace readers.
//! - [`experiment`]: experiment files and their digests.
//! - [`output`]: `timeseries.csv` and `summary.json`.
//! - [`commands`]: the subcommands.

pub mod commands;
pub mod experiment;
pub mod io;
pub mod output;
