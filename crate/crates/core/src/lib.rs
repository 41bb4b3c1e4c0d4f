//! Doubly reflected backward SDEs with completely irregular barriers on
//! finite scenario trees.
//!
//! The crate solves the equation three independent ways, checks every
//! defining condition of a solution, and cross-validates the solution
//! against brute-force values of nonlinear Dynkin games over stopping
//! times and stopping systems. A pricing layer turns the solver into a
//! game-option pricer with superhedging verification.

pub mod bsde;
pub mod drbsde;
pub mod dynkin;
pub mod error;
pub mod fuzz;
pub mod pricing;
pub mod process;
pub mod rbsde;
pub mod scenario;
pub mod tree;

pub use bsde::{bsde_solve, bsde_step, driver_library, f_expectation, BsdeSolution, Driver};
pub use drbsde::{
    compare, solve_direct, solve_fixed_point, solve_picard_driver_process, verify_solution,
    DrbsdeSolution, VerificationReport,
};
pub use dynkin::{game_values, GameReport, StoppingSystem, StoppingTime};
pub use error::{Error, Result};
pub use pricing::{build_market, MarketModel, MarketParams};
pub use process::{AdmissiblePair, LadlagProcess, Regularity};
pub use rbsde::{ref_operator, RefSolution};
pub use tree::{build_tree, AdaptedProcess, NodeId, ScenarioTree, Scheme, TimeGrid};
