//! Algebraic iterative reconstruction for parallel-beam CT with statistical
//! stopping rules.

pub mod ctmodel;
pub mod harness;
pub mod linops;
pub mod solvers;
pub mod stoprules;
pub mod trace;
