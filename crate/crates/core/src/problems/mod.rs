//! Benchmark problems.

pub mod instance_file;
pub mod random_mdp;
pub mod rideshare;
pub mod shortest_path;
