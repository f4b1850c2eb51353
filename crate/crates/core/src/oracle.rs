//! Brute-force reference solutions for small problems.
//!
//! Every assignment of each element to {free, lower, upper} is tried. With
//! the clamped elements fixed, the free part is the minimum-norm solution of
//! `B_F u_F = v - B_C u_C` (or its least-squares solution when that system
//! has none). The best in-box candidate wins: least `||u||^2` if any
//! candidate meets `B u = v`, otherwise least `||v - B u||^2`. Reduced
//! solves use nalgebra's own SVD, not the allocator's kernels.
//!
//! [`cross_solve`] is a second, iterative reference used to check this one.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::Bounds;
use crate::linalg::{Matrix, Vector};

pub const MAX_ORACLE_M: usize = 8;

/// Candidates satisfying `B u = v` within this (relative to `1 + ||v||`)
/// count as exact.
const EXACT_TOL: f64 = 1e-9;
/// Box slack allowed before a candidate is rejected.
const BOX_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("enumeration refused for m = {m} (limit {MAX_ORACLE_M})")]
    TooLarge { m: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OracleStatus {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub u: Vector,
    /// `||u||^2` when feasible, `||v - B u||^2` otherwise.
    pub objective: f64,
    pub residual: f64,
    pub active_set: Vec<(usize, Side)>,
    pub status: OracleStatus,
}

fn check(b: &Matrix, v: &Vector, bounds: &Bounds) -> Result<(), OracleError> {
    let (n, m) = b.shape();
    if bounds.len() != m || v.len() != n {
        return Err(OracleError::Dimension(format!(
            "B is {n}x{m}, bounds {}, v {}",
            bounds.len(),
            v.len()
        )));
    }
    Ok(())
}

fn pinv(m: &Matrix) -> Matrix {
    let smax = m.clone().singular_values().max();
    let eps = (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * smax.max(f64::MIN_POSITIVE) * 1e3;
    m.clone().pseudo_inverse(eps).expect("eps is nonnegative")
}

struct Candidate {
    u: Vector,
    residual_sq: f64,
    norm_sq: f64,
    pattern: Vec<u8>,
}

pub fn solve_exact(b: &Matrix, v: &Vector, bounds: &Bounds) -> Result<OracleSolution, OracleError> {
    check(b, v, bounds)?;
    let m = b.ncols();
    if m > MAX_ORACLE_M {
        return Err(OracleError::TooLarge { m });
    }
    let exact_tol = EXACT_TOL * (1.0 + v.norm());
    let total = 3usize.pow(m as u32);
    let mut best_exact: Option<Candidate> = None;
    let mut best_lsq: Option<Candidate> = None;

    // pattern digit: 0 free, 1 lower, 2 upper; enumeration order is
    // lexicographic with element 0 most significant
    let mut pattern = vec![0u8; m];
    for code in 0..total {
        let mut c = code;
        for slot in (0..m).rev() {
            pattern[slot] = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..m).filter(|&i| pattern[i] == 0).collect();
        let mut u = Vector::zeros(m);
        for i in 0..m {
            match pattern[i] {
                1 => u[i] = bounds.lower()[i],
                2 => u[i] = bounds.upper()[i],
                _ => {}
            }
        }
        let rhs = v - b * &u;
        if !free.is_empty() {
            let b_f = b.select_columns(free.iter());
            let u_f = pinv(&b_f) * &rhs;
            for (slot, &i) in free.iter().enumerate() {
                u[i] = u_f[slot];
            }
        }
        let in_box = (0..m).all(|i| u[i] >= bounds.lower()[i] - BOX_TOL && u[i] <= bounds.upper()[i] + BOX_TOL);
        if !in_box {
            continue;
        }
        let u = bounds.clip(&u);
        let residual_sq = (v - b * &u).norm_squared();
        let cand = Candidate {
            norm_sq: u.norm_squared(),
            residual_sq,
            u,
            pattern: pattern.clone(),
        };
        if residual_sq.sqrt() <= exact_tol {
            if best_exact.as_ref().is_none_or(|b| cand.norm_sq < b.norm_sq * (1.0 - 1e-12) - 1e-300) {
                best_exact = Some(cand);
            }
        } else if best_exact.is_none() {
            let better = match &best_lsq {
                None => true,
                Some(b) => {
                    let scale = 1e-12 * b.residual_sq.max(1e-300);
                    cand.residual_sq < b.residual_sq - scale
                        || (cand.residual_sq <= b.residual_sq + scale && cand.norm_sq < b.norm_sq * (1.0 - 1e-12))
                }
            };
            if better {
                best_lsq = Some(cand);
            }
        }
    }

    let (chosen, status) = match (best_exact, best_lsq) {
        (Some(c), _) => (c, OracleStatus::Feasible),
        (None, Some(c)) => (c, OracleStatus::Infeasible),
        // the all-clamped patterns are always in the box
        (None, None) => unreachable!("vertex patterns are always admissible"),
    };
    let active_set = chosen
        .pattern
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| match p {
            1 => Some((i, Side::Min)),
            2 => Some((i, Side::Max)),
            _ => None,
        })
        .collect();
    let objective = match status {
        OracleStatus::Feasible => chosen.norm_sq,
        OracleStatus::Infeasible => chosen.residual_sq,
    };
    Ok(OracleSolution {
        residual: chosen.residual_sq.sqrt(),
        u: chosen.u,
        objective,
        active_set,
        status,
    })
}

/// Iterative reference used to cross-check [`solve_exact`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossSolution {
    pub u: Vector,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projection of the origin onto `{B u = v} ∩ box` by Dykstra's alternating
/// projections. Returns `None` when the iterates do not settle on a point
/// of the affine set, which happens when the intersection is empty.
pub fn cross_min_norm(b: &Matrix, v: &Vector, bounds: &Bounds, max_iter: usize, tol: f64) -> Option<CrossSolution> {
    let bp = pinv(b);
    let project_affine = |x: &Vector| x - &bp * (b * x - v);
    let m = b.ncols();
    let mut x = Vector::zeros(m);
    let mut p = Vector::zeros(m);
    let mut q = Vector::zeros(m);
    for it in 1..=max_iter {
        let y = project_affine(&(&x + &p));
        p = &x + &p - &y;
        let x_next = bounds.clip(&(&y + &q));
        q = &y + &q - &x_next;
        let change = (&x_next - &x).amax();
        x = x_next;
        if change <= tol * 1e-3 && (b * &x - v).amax() <= tol {
            return Some(CrossSolution {
                residual: (v - b * &x).norm(),
                u: x,
                iterations: it,
                converged: true,
            });
        }
    }
    None
}

/// Minimum of `||v - B u||^2` over the box by accelerated projected gradient.
pub fn cross_min_residual(b: &Matrix, v: &Vector, bounds: &Bounds, max_iter: usize, tol: f64) -> CrossSolution {
    let lipschitz = b.clone().singular_values().max().powi(2).max(1e-300);
    let step = 1.0 / lipschitz;
    let mut x = bounds.clip(&Vector::zeros(b.ncols()));
    let mut y = x.clone();
    let mut t = 1.0f64;
    for it in 1..=max_iter {
        let grad = b.transpose() * (b * &y - v);
        let x_next = bounds.clip(&(&y - grad * step));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let change = (&x_next - &x).amax();
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        // restart on non-monotone progress
        if (v - b * &x_next).norm_squared() > (v - b * &x).norm_squared() {
            t = 1.0;
            y = x_next.clone();
        } else {
            t = t_next;
        }
        x = x_next;
        if change <= tol * 1e-3 && it > 10 {
            return CrossSolution {
                residual: (v - b * &x).norm(),
                u: x,
                iterations: it,
                converged: true,
            };
        }
    }
    CrossSolution {
        residual: (v - b * &x).norm(),
        u: x,
        iterations: max_iter,
        converged: false,
    }
}

/// Runs the cross-solver matching the oracle's status and reports the
/// discrepancy: `||u - u*||_inf` when feasible, `|r - r*|` otherwise.
pub fn cross_check(b: &Matrix, v: &Vector, bounds: &Bounds, exact: &OracleSolution) -> (CrossSolution, f64) {
    match exact.status {
        OracleStatus::Feasible => match cross_min_norm(b, v, bounds, 200_000, 1e-10) {
            Some(c) => {
                let gap = (&c.u - &exact.u).amax();
                (c, gap)
            }
            None => {
                let c = cross_min_residual(b, v, bounds, 200_000, 1e-12);
                let gap = c.residual;
                (c, gap)
            }
        },
        OracleStatus::Infeasible => {
            let c = cross_min_residual(b, v, bounds, 200_000, 1e-12);
            let gap = (c.residual - exact.residual).abs();
            (c, gap)
        }
    }
}
