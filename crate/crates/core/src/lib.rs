//! Cyclic small-gain analysis for interconnected time-delay systems.
//!
//! Gains are class-K functions built from a small closed family
//! ([`gain_algebra`]). A [`gain_graph::GainDigraph`] collects them, and the
//! cyclic small-gain condition is checked cycle by cycle. When it holds,
//! [`gain_reduction`] eliminates subsystems one at a time to produce
//! closed-loop asymptotic-gain and global-stability bounds. [`dde_sim`]
//! integrates the delay equations, and [`bound_checker`] tests the bounds
//! against the simulated trajectories.

pub mod bound_checker;
pub mod cli;
pub mod dde_sim;
pub mod fixtures;
pub mod gain_algebra;
pub mod gain_graph;
pub mod gain_reduction;
pub mod specdsl;
