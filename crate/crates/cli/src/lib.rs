//! Library side of the `sosexit` command-line tool: problem files, command
//! implementations and report formats.

pub mod commands;
pub mod problem;
pub mod report;
