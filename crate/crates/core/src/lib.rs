pub mod brom;
pub mod cli;
pub mod config;
pub mod engine;
pub mod numerics;
pub mod perf;
pub mod qcore;
pub mod romimage;
pub mod tensorfile;
pub mod toy;
