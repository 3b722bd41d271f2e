//! Exact-count reference algorithms, k-means solvers and the coreset verifier.
//!
//! Everything here operates on a materialized point set and serves as ground
//! truth for the streaming modules.

mod sensitivity;
mod solve;
mod verify;

pub use sensitivity::{
    exact_cell_counts, offline_coreset, offline_sensitivity, CountSource, LevelEstimates, SensitivityAssignment,
};
pub use solve::{brute_force_opt, kmeans_cost, kmeanspp_lloyd, kmeanspp_seed, unit_weights, Method, OfflineSolution};
pub use verify::{
    relative_error, sensitivity_lower_bound, verify_coreset, Family, FamilyReport, VerifyReport, FAMILIES,
};
