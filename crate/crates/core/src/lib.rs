//! Simulation library for transient random walks on countable groups.
//!
//! The crate builds random walks on integer lattices `Z^d` and free groups
//! `F_k`, tracks site occupation (local times) incrementally, and evaluates
//! functionals of the form `G_n(f) = sum_x f(l(n-1, x))` where `l(n, x)` is
//! the number of visits to site `x` among the first `n + 1` positions.
//!
//! On top of the walk engine sit Monte Carlo experiments that compare
//! normalized functionals `G_n(f)/n` against their almost-sure limits
//! `gamma^2 * sum_j f(j) (1-gamma)^(j-1)`, where `gamma` is the escape
//! probability of the walk, and that probe the boundary of the L^2 regime
//! with an explicit diverging functional.
//!
//! Determinism is a design requirement: every random draw derives from a
//! master seed through fixed, documented stream derivations, and all
//! cross-replica reductions happen in replica order so results do not depend
//! on thread count.

pub mod alias;
pub mod config;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod group;
pub mod hash;
pub mod local_stats;
pub mod report;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod walk;

mod sites;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
