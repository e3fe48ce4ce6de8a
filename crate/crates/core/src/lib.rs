//! A numerical laboratory for the Quadratic Transfers Mechanism (QTM).
//!
//! Agents buy signed votes for each of `m` alternatives at quadratic cost,
//! the payments are rebated equally to the other agents, and the outcome is
//! drawn from a softmax of the vote totals. This crate provides
//!
//! * [`mechanism`]: the primitives (vote box, tally, lottery, payoffs, derivatives),
//! * [`preferences`]: type distributions, summaries and belief profiles,
//! * [`equilibrium`]: a first-order-condition solver for symmetric equilibria,
//! * [`oracle`]: brute-force enumeration and grid search for tiny instances,
//! * [`diagnostics`]: efficiency, concentration and pivotality measurements.
//!
//! ```
//! use qtm_core::equilibrium::{solve_equilibrium, SolverConfig};
//! use qtm_core::mechanism::ProblemSpec;
//! use qtm_core::preferences::TypeDistribution;
//!
//! let spec = ProblemSpec::new(2, 3, 1.0, 1.0)?;
//! let dist = TypeDistribution::discrete([(0.5, [1.0, 0.0]), (0.5, [0.0, 1.0])]);
//! let eq = solve_equilibrium(&spec, &dist, &SolverConfig::default())?;
//! assert!(eq.converged);
//! assert!(eq.foc_residual <= 1e-6);
//! # Ok::<(), qtm_core::Error>(())
//! ```

pub mod diagnostics;
pub mod equilibrium;
mod error;
pub mod matrix;
pub mod mechanism;
pub mod oracle;
pub mod preferences;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};

// the guide's snippets run as doc-tests
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/mechanism.md")]
    mod mechanism {}
    #[doc = include_str!("../../../book/src/preferences.md")]
    mod preferences {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    mod equilibrium {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
