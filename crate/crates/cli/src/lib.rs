//! Configuration parsing and run orchestration behind the `kdv-gauge` binary.

pub mod config;
pub mod run;
