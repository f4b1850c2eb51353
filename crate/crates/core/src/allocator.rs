//! Problem/result types, the iteration trace and the top-level dispatch
//! between the feasible and infeasible phases.

use serde::Serialize;
use thiserror::Error;

use crate::feasible::{allocate_feasible, FeasibleOutcome};
use crate::geometry::{saturated_set, weighted_distance, Bounds, BoundsError};
use crate::infeasible::{allocate_infeasible, Condition, FreeInverseCase, InfeasibilityDiagnosis};
use crate::linalg::{null_space, pinv_right, rank_relative, singular_inverse, LinalgError, Matrix, Vector};

/// Numerical knobs of the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Rank threshold relative to the largest singular value, used for
    /// rank(B), rank(N_S) and the free-inverse dispatch.
    pub rank_rtol: f64,
    /// Relative tolerance for ties on `||w||_inf`.
    pub tie_tol: f64,
    /// Absolute slack on the `> 1` continuation test and on the final
    /// `||w||_inf <= 1` check.
    pub exit_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank_rtol: 1e-9,
            tie_tol: 1e-9,
            exit_tol: 1e-9,
        }
    }
}

#[derive(Debug, Error)]
pub enum AllocError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{phase:?} phase exceeded its iteration budget of {limit}")]
    IterationBudget {
        phase: Phase,
        limit: usize,
        trace: Box<Trace>,
    },
}

#[derive(Debug, Clone)]
pub struct AllocationProblem {
    pub b: Matrix,
    pub bounds: Bounds,
    pub v_desire: Vector,
}

impl AllocationProblem {
    pub fn new(b: Matrix, bounds: Bounds, v_desire: Vector) -> Result<Self, AllocError> {
        if bounds.len() != b.ncols() {
            return Err(AllocError::Dimension(format!(
                "B has {} columns but bounds have {} elements",
                b.ncols(),
                bounds.len()
            )));
        }
        if v_desire.len() != b.nrows() {
            return Err(AllocError::Dimension(format!(
                "B has {} rows but v_desire has {} elements",
                b.nrows(),
                v_desire.len()
            )));
        }
        Ok(Self { b, bounds, v_desire })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub index: usize,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeInverseRecord {
    pub case: FreeInverseCase,
    pub rows: Vec<Vec<f64>>,
}

/// One modification of the input vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub phase: Phase,
    pub saturated: Vec<usize>,
    pub pivot: usize,
    /// Free inverse in force for this step (infeasible phase only).
    pub free_inverse: Option<FreeInverseRecord>,
    /// Elements moved into the saturated set by the escaped-element repair
    /// before the intersections were computed.
    pub escaped: Vec<usize>,
    /// Input vector the intersections were computed from.
    pub u_start: Vec<f64>,
    pub w_start: Vec<f64>,
    pub candidates: Vec<Candidate>,
    /// Smallest valid intersection value, `None` if no free element crosses.
    pub min_delta: Option<f64>,
    pub joined: Vec<usize>,
    /// `true` when this step parked the saturated elements on their borders
    /// and ended the phase.
    pub exit: bool,
    pub applied_delta: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub initial_u: Vec<f64>,
    pub initial_w: Vec<f64>,
    pub steps: Vec<TraceStep>,
    /// Why the feasible phase handed over to the infeasible phase.
    pub handoff: Option<InfeasibilityDiagnosis>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AllocationResult {
    pub u: Vector,
    pub w: Vector,
    pub residual: f64,
    pub iterations: usize,
    pub feasible_iterations: usize,
    pub feasibility: Feasibility,
    pub trace: Trace,
}

impl AllocationResult {
    pub fn norm_inf_w(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }
}

/// Precomputed data for one effectiveness matrix; reusable across solves
/// with different bounds and targets.
#[derive(Debug, Clone)]
pub struct Allocator {
    pub(crate) b: Matrix,
    pub(crate) pinv: Option<Matrix>,
    pub(crate) null: Option<Matrix>,
    pub(crate) rank: usize,
    pub(crate) config: SolverConfig,
}

impl Allocator {
    pub fn new(b: Matrix, config: SolverConfig) -> Result<Self, AllocError> {
        let (n, m) = b.shape();
        if n == 0 || m < n {
            return Err(AllocError::Dimension(format!(
                "effectiveness matrix must be n x m with m >= n >= 1, got {n}x{m}"
            )));
        }
        let rank = rank_relative(&b, config.rank_rtol)?;
        let (pinv, null) = if rank == n {
            let null = if m > n { null_space(&b)? } else { Matrix::zeros(m, 0) };
            (Some(pinv_right(&b)?), Some(null))
        } else {
            (None, None)
        };
        Ok(Self {
            b,
            pinv,
            null,
            rank,
            config,
        })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn null_space(&self) -> Option<&Matrix> {
        self.null.as_ref()
    }

    pub fn pseudo_inverse(&self) -> Option<&Matrix> {
        self.pinv.as_ref()
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn solve(&self, bounds: &Bounds, v_desire: &Vector) -> Result<AllocationResult, AllocError> {
        if bounds.len() != self.m() || v_desire.len() != self.n() {
            return Err(AllocError::Dimension(format!(
                "expected {} bounds and {} targets, got {} and {}",
                self.m(),
                self.n(),
                bounds.len(),
                v_desire.len()
            )));
        }
        let mut trace = Trace::default();
        let cfg = self.config;

        match &self.pinv {
            Some(_) => match allocate_feasible(self, bounds, v_desire, &mut trace)? {
                FeasibleOutcome::Done { u, iterations } => {
                    Ok(self.finish(u, bounds, v_desire, iterations, iterations, Feasibility::Feasible, trace))
                }
                FeasibleOutcome::Handoff {
                    u,
                    sat,
                    diagnosis,
                    iterations,
                } => {
                    trace.handoff = Some(diagnosis);
                    let (u, total) = allocate_infeasible(self, bounds, v_desire, sat, u, iterations, &mut trace)?;
                    Ok(self.finish(u, bounds, v_desire, total, iterations, Feasibility::Infeasible, trace))
                }
            },
            None => {
                // rank(B) < n: start from the augmented generalized inverse
                let g = singular_inverse(&self.b, Some(cfg.rank_rtol))?;
                let u = g * v_desire;
                let wd = weighted_distance(&u, bounds);
                trace.initial_u = u.iter().copied().collect();
                trace.initial_w = wd.w.iter().copied().collect();
                let sat = saturated_set(&wd, cfg.tie_tol);
                trace.handoff = Some(InfeasibilityDiagnosis {
                    condition: Condition::RankDeficientB,
                    rank_b: self.rank,
                    n: self.n(),
                    k: sat.k(),
                    dof: self.m() - self.n(),
                    rank_ns: None,
                });
                if wd.norm_inf() <= 1.0 {
                    return Ok(self.finish(u, bounds, v_desire, 0, 0, Feasibility::Infeasible, trace));
                }
                let (u, total) = allocate_infeasible(self, bounds, v_desire, sat, u, 0, &mut trace)?;
                Ok(self.finish(u, bounds, v_desire, total, 0, Feasibility::Infeasible, trace))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        u: Vector,
        bounds: &Bounds,
        v_desire: &Vector,
        iterations: usize,
        feasible_iterations: usize,
        feasibility: Feasibility,
        trace: Trace,
    ) -> AllocationResult {
        let w = weighted_distance(&u, bounds).w;
        let residual = (v_desire - &self.b * &u).norm();
        AllocationResult {
            u,
            w,
            residual,
            iterations,
            feasible_iterations,
            feasibility,
            trace,
        }
    }
}

/// One-shot convenience wrapper around [`Allocator`].
pub fn allocate(problem: &AllocationProblem, config: SolverConfig) -> Result<AllocationResult, AllocError> {
    Allocator::new(problem.b.clone(), config)?.solve(&problem.bounds, &problem.v_desire)
}

pub(crate) fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

pub(crate) fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
