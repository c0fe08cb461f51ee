//! Command-line tool, `.bsrn` model files, PNG IO and run reports for
//! binary-weight super-resolution models built with `bsr-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod io;
pub mod report;
