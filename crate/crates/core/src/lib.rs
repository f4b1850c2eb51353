//! Constrained control allocation for over-actuated systems.
//!
//! The allocator starts from the pseudo-inverse solution and pulls
//! saturated actuators back inside their limits: first along the null space
//! of the effectiveness matrix (no change in the produced virtual control),
//! then, when that is no longer possible, along directions that keep the
//! virtual-control error as small as possible. Rank-deficient cases are
//! handled with an augmented generalized inverse.
//!
//! ```
//! use pinv_alloc::{allocate, AllocationProblem, Bounds, Matrix, SolverConfig, Vector};
//!
//! let b = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
//! let bounds = Bounds::from_slices(&[-1.0, -0.2], &[1.0, 0.2]).unwrap();
//! let problem = AllocationProblem::new(b, bounds, Vector::from_element(1, 1.0)).unwrap();
//! let r = allocate(&problem, SolverConfig::default()).unwrap();
//! assert!((r.u[0] - 0.8).abs() < 1e-12 && (r.u[1] - 0.2).abs() < 1e-12);
//! ```

// `!(a < b)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod document;
pub mod dynamic;
pub mod feasible;
pub mod fuzz;
pub mod geometry;
pub mod infeasible;
pub mod linalg;
pub mod oracle;
pub mod slv;

pub use allocator::{
    allocate, AllocError, AllocationProblem, AllocationResult, Allocator, Feasibility, Phase, SolverConfig, Trace,
    TraceStep,
};
pub use dynamic::{effective_bounds, ActuatorLimits, AllocatorState};
pub use geometry::{Bounds, SaturationState};
pub use infeasible::{Condition, FreeInverseCase, InfeasibilityDiagnosis};
pub use linalg::{Matrix, Vector};
