//! Exact verification of the return-gap bound on enumerable MDPs.
//!
//! Everything here is computed without sampling: returns by linear solve,
//! state-action occupancies by forward recursion truncated at negligible
//! discounted tail mass, and total-variation error quantities as exact sums.

pub mod instances;
mod tabular;
mod verify;

pub use tabular::{exact_return, occupancies, truncation_horizon, TabularMdp, TabularPolicy};
pub use verify::{
    check_return_bound, check_support_inequalities, error_quantities, policy_shift,
    return_gap_bound, tv_distance, BoundInputs, BoundReport, ErrorQuantities, InequalityCheck,
    InequalityReport,
};

/// Discounted tail mass below which occupancy recursions stop; the remainder
/// is accounted for analytically in the check tolerances.
pub const TAIL_MASS: f64 = 1e-10;

/// Numeric slack for exact-arithmetic assertions.
pub const CHECK_TOL: f64 = 1e-9;
