//! Numerics for the lower-deviation problem of the range of a random walk
//! in `Z^d`, `d ≥ 3`: the Swiss-cheese variational rate function, the
//! skeleton functionals on measures, a translation-invariant distance on
//! collections of orbits, and Monte Carlo / exact validation of the walk itself.

pub mod exec;
pub mod functionals;
pub mod measures;
pub mod mv_topology;
pub mod numerics;
pub mod output;
pub mod rate_function;
pub mod rng;
pub mod walk_sim;

pub use exec::Exec;
