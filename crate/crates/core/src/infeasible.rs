//! Infeasible phase: once the saturated set can no longer be corrected in
//! the null space of `B`, saturated elements are pulled back along
//! `-delta_bar` and the free elements are re-solved to keep the virtual
//! control residual small.

use serde::Serialize;

use crate::allocator::{matrix_rows, to_vec, AllocError, Allocator, Candidate, FreeInverseRecord, Phase, Trace, TraceStep};
use crate::feasible::{tied_with, top_of};
use crate::geometry::{crossing, saturated_set, weighted_distance, Bounds, SaturationState, WeightedDistance};
use crate::linalg::{lsq_inverse, pinv_right, rank_relative, rank_with_tol, singular_inverse, LinalgError, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    None,
    /// rank(B) < n.
    RankDeficientB,
    /// More saturated elements than null-space dimensions.
    TooManySaturated,
    /// The saturated rows of the null-space basis are linearly dependent.
    SingularNs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InfeasibilityDiagnosis {
    pub condition: Condition,
    pub rank_b: usize,
    pub n: usize,
    pub k: usize,
    /// Null-space dimension `m - n`.
    pub dof: usize,
    pub rank_ns: Option<usize>,
}

/// Checks, in order: rank(B) < n, k > m - n, rank(N_S) < k.
pub fn diagnose(
    b: &Matrix,
    null: Option<&Matrix>,
    sat: &SaturationState,
    rank_rtol: f64,
) -> Result<InfeasibilityDiagnosis, LinalgError> {
    let (n, m) = b.shape();
    let rank_b = rank_relative(b, rank_rtol)?;
    let k = sat.k();
    let dof = m - n.min(m);
    let mut diag = InfeasibilityDiagnosis {
        condition: Condition::None,
        rank_b,
        n,
        k,
        dof,
        rank_ns: None,
    };
    if rank_b < n {
        diag.condition = Condition::RankDeficientB;
        return Ok(diag);
    }
    if k > dof {
        diag.condition = Condition::TooManySaturated;
        return Ok(diag);
    }
    let null = null.ok_or(LinalgError::Contract {
        op: "diagnose",
        msg: "null space required when B has full row rank".into(),
    })?;
    let ns = null.select_rows(sat.saturated().iter());
    // N is orthonormal, so its rows are measured against ||N|| = 1
    let rank_ns = rank_with_tol(&ns, Some(rank_rtol))?;
    diag.rank_ns = Some(rank_ns);
    if rank_ns < k {
        diag.condition = Condition::SingularNs;
    }
    Ok(diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FreeInverseCase {
    /// rank(B_F) = n: right pseudo-inverse.
    FullRank,
    /// rank(B_F) = number of free elements < n: least squares.
    LeastSquares,
    /// rank(B_F) below both: augmented generalized inverse.
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeInverse {
    pub matrix: Matrix,
    pub case: FreeInverseCase,
}

impl FreeInverse {
    pub fn record(&self) -> FreeInverseRecord {
        FreeInverseRecord {
            case: self.case,
            rows: matrix_rows(&self.matrix),
        }
    }
}

/// Inverse of the free block `B_F` (`n x (m - k)`), chosen by its rank.
pub fn free_inverse(b_f: &Matrix, rank_rtol: f64) -> Result<FreeInverse, LinalgError> {
    let (n, q) = b_f.shape();
    let rank = rank_relative(b_f, rank_rtol)?;
    if rank == n {
        Ok(FreeInverse {
            matrix: pinv_right(b_f)?,
            case: FreeInverseCase::FullRank,
        })
    } else if rank == q {
        Ok(FreeInverse {
            matrix: lsq_inverse(b_f)?,
            case: FreeInverseCase::LeastSquares,
        })
    } else {
        Ok(FreeInverse {
            matrix: singular_inverse(b_f, Some(rank_rtol))?,
            case: FreeInverseCase::Augmented,
        })
    }
}

/// `B_F^dagger B_S delta_bar`: rate at which the free elements move per unit
/// of `delta`.
pub fn free_response(b: &Matrix, sat: &SaturationState, free_inv: &FreeInverse) -> Vector {
    let b_s = b.select_columns(sat.saturated().iter());
    &free_inv.matrix * (b_s * sat.delta_bar())
}

/// `u_S <- u_S - delta_bar * delta`, `u_F <- B_F^dagger (v - B_S u_S)`.
pub fn apply_modification(
    u: &Vector,
    delta: f64,
    sat: &SaturationState,
    b: &Matrix,
    free_inv: Option<&FreeInverse>,
    v_desire: &Vector,
) -> Vector {
    let mut out = u.clone();
    for (slot, &i) in sat.saturated().iter().enumerate() {
        out[i] -= sat.delta_bar()[slot] * delta;
    }
    if let Some(fi) = free_inv {
        let u_s = Vector::from_iterator(sat.k(), sat.saturated().iter().map(|&i| out[i]));
        let b_s = b.select_columns(sat.saturated().iter());
        let u_f = &fi.matrix * (v_desire - b_s * u_s);
        for (slot, &j) in sat.free().iter().enumerate() {
            out[j] = u_f[slot];
        }
    }
    out
}

/// State after moving every escaped free element into the saturated set.
#[derive(Debug, Clone)]
pub struct Repaired {
    /// Input vector with the free part re-solved at `delta = 0`.
    pub u: Vector,
    pub sat: SaturationState,
    pub free_inverse: Option<FreeInverse>,
    pub escaped: Vec<usize>,
}

/// Re-solves the free part at `delta = 0` and moves any free element that
/// lands above the pivot level onto that level (and into `S`), repeating
/// until none remains.
///
/// Among several escaped elements the one with the largest reverse step
/// `(w_j - w_t) / (g_j / d_j)` goes first, `g = B_F^dagger B_S delta_bar`.
pub fn repair_escaped(
    alloc: &Allocator,
    bounds: &Bounds,
    v_desire: &Vector,
    u: Vector,
    sat: SaturationState,
) -> Result<Repaired, LinalgError> {
    let cfg = alloc.config;
    let mut u = u;
    let mut sat = sat;
    let mut escaped = Vec::new();
    loop {
        if sat.free().is_empty() {
            return Ok(Repaired {
                u,
                sat,
                free_inverse: None,
                escaped,
            });
        }
        let b_f = alloc.b.select_columns(sat.free().iter());
        let fi = free_inverse(&b_f, cfg.rank_rtol)?;
        u = apply_modification(&u, 0.0, &sat, &alloc.b, Some(&fi), v_desire);
        let wd = weighted_distance(&u, bounds);
        let w_t = wd.w[sat.pivot()];
        let level = w_t + cfg.tie_tol * w_t.max(1.0);

        let gain = free_response(&alloc.b, &sat, &fi);
        let mut pick: Option<(usize, f64)> = None;
        for (slot, &j) in sat.free().iter().enumerate() {
            if wd.w[j] <= level {
                continue;
            }
            let rate = gain[slot] / wd.offset(j);
            let reverse = if rate == 0.0 { f64::INFINITY } else { (wd.w[j] - w_t) / rate };
            if pick.is_none_or(|(_, best)| reverse > best) {
                pick = Some((j, reverse));
            }
        }
        let Some((j, _)) = pick else {
            return Ok(Repaired {
                u,
                sat,
                free_inverse: Some(fi),
                escaped,
            });
        };
        u[j] = w_t * wd.offset(j) + wd.center[j];
        sat = sat.extended([j], &wd);
        escaped.push(j);
    }
}

/// Intersection value of the free element in slot `slot` of `sat.free()`,
/// given its response rate `gain_j = (B_F^dagger B_S delta_bar)_j`.
pub fn intersection_infeasible(
    slot: usize,
    sat: &SaturationState,
    wd: &WeightedDistance,
    gain_j: f64,
    tie_tol: f64,
) -> Option<f64> {
    let t = sat.pivot();
    let j = sat.free()[slot];
    let pivot_rate = sat.delta_bar()[sat.pivot_slot()] / wd.offset(t);
    let free_rate = gain_j / wd.offset(j);
    crossing(wd.w[t], pivot_rate, wd.w[j], free_rate, tie_tol)
}

/// Runs the infeasible loop from `(u, sat)`. `done` iterations have already
/// been spent by the feasible phase. Returns the final input vector and the
/// total iteration count.
pub fn allocate_infeasible(
    alloc: &Allocator,
    bounds: &Bounds,
    v_desire: &Vector,
    sat: SaturationState,
    u: Vector,
    done: usize,
    trace: &mut Trace,
) -> Result<(Vector, usize), AllocError> {
    let cfg = alloc.config;
    let budget = alloc.m();
    let mut iterations = done;
    let mut sat = sat;
    let mut u = u;

    loop {
        if iterations >= budget {
            return Err(AllocError::IterationBudget {
                phase: Phase::Infeasible,
                limit: budget,
                trace: Box::new(trace.clone()),
            });
        }
        let repaired = repair_escaped(alloc, bounds, v_desire, u, sat)?;
        u = repaired.u;
        sat = repaired.sat;
        let wd = weighted_distance(&u, bounds);
        let t = sat.pivot();
        let w_t = wd.w[t];
        let scale = wd.offset(t).abs();
        iterations += 1;

        let u_start = to_vec(&u);
        let w_start = to_vec(&wd.w);

        let (intersections, free_record) = match &repaired.free_inverse {
            Some(fi) => {
                let gain = free_response(&alloc.b, &sat, fi);
                let list: Vec<(usize, Option<f64>)> = sat
                    .free()
                    .iter()
                    .enumerate()
                    .map(|(slot, &j)| (j, intersection_infeasible(slot, &sat, &wd, gain[slot], cfg.tie_tol)))
                    .collect();
                (list, Some(fi.record()))
            }
            // every element saturated: park them all on their borders
            None => (Vec::new(), None),
        };
        let min_delta = intersections
            .iter()
            .filter_map(|x| x.1)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));

        let continue_delta = min_delta.filter(|&d| w_t - d / scale > 1.0 + cfg.exit_tol);
        let (applied, exit, joined) = match continue_delta {
            Some(d) => (d, false, tied_with(&intersections, d, cfg.tie_tol)),
            None => ((top_of(&sat, &wd) - 1.0).max(0.0) * scale, true, Vec::new()),
        };
        u = apply_modification(&u, applied, &sat, &alloc.b, repaired.free_inverse.as_ref(), v_desire);
        let wd_after = weighted_distance(&u, bounds);

        trace.steps.push(TraceStep {
            phase: Phase::Infeasible,
            saturated: sat.saturated().to_vec(),
            pivot: t,
            free_inverse: free_record,
            escaped: repaired.escaped,
            u_start,
            w_start,
            candidates: intersections
                .iter()
                .map(|&(index, delta)| Candidate { index, delta })
                .collect(),
            min_delta,
            joined: joined.clone(),
            exit,
            applied_delta: applied,
            u: to_vec(&u),
            w: to_vec(&wd_after.w),
        });

        if exit {
            return Ok((u, iterations));
        }
        let ties = saturated_set(&wd_after, cfg.tie_tol);
        sat = sat.extended(joined.into_iter().chain(ties.saturated().iter().copied()), &wd_after);
    }
}
