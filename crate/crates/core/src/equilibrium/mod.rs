//! Symmetric Bayes-Nash equilibria of the mechanism.
//!
//! A best response must satisfy, for every alternative `j`,
//!
//! ```text
//! 2c a_j = sum_{k != j} (u_j - u_k) r_{j,k}(a),    r_{j,k}(a) = E[Q_j(a) Q_k(a)]
//! ```
//!
//! where the expectation runs over the opponent field: the vote totals of the
//! other `n - 1` agents playing the common strategy. The solver alternates
//! between building that field and solving the condition for every type.

mod beliefs;
mod config;
mod field;
mod solver;
mod strategy;

pub use beliefs::{solve_with_beliefs, BeliefOutcome};
pub use config::{Representation, SolverConfig};
pub use field::{
    build_field, composition_count, estimate_rjk, estimate_rjk_with_se, rjk_gradient_norm_sums,
    FieldKind, OpponentField,
};
pub(crate) use field::pair_moments;
pub use solver::{best_response, foc_residual, solve_equilibrium, EquilibriumResult, ResidualKind};
pub use strategy::{linear_votes, Strategy, TabularEntry};
