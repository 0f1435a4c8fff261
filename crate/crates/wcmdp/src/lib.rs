//! Model files, experiment sweeps and the command-line front end for
//! [`wcmdp_core`].

pub mod cli;
pub mod format;
pub mod harness;
pub mod report;

pub use wcmdp_core as core;
