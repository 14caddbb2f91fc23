//! File formats, configuration, reports and the command-line front end for
//! the condition-adaptive drowsiness detector in `condadapt-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod format;
pub mod pgm;
pub mod report;
