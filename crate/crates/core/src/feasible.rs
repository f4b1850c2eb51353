//! Feasible phase: walk the pseudo-inverse solution along the null space of
//! `B` until every element is inside its bounds, keeping `B u = v_desire`.

use crate::allocator::{to_vec, AllocError, Allocator, Candidate, Phase, Trace, TraceStep};
use crate::geometry::{crossing, saturated_set, weighted_distance, Bounds, SaturationState, WeightedDistance};
use crate::infeasible::{diagnose, Condition, InfeasibilityDiagnosis};
use crate::linalg::{rank_with_tol, Matrix, Vector};

/// Result of one intersection search.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleStep {
    pub u_reduction: Vector,
    pub intersections: Vec<(usize, Option<f64>)>,
    pub chosen_delta: Option<f64>,
    pub chosen_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum FeasibleOutcome {
    Done {
        u: Vector,
        iterations: usize,
    },
    /// The saturated set can no longer be corrected inside the null space.
    Handoff {
        u: Vector,
        sat: SaturationState,
        diagnosis: InfeasibilityDiagnosis,
        iterations: usize,
    },
}

/// Minimum-norm null-space correction `N N_S^T (N_S N_S^T)^-1 delta_bar`.
///
/// Returns `None` when `N_S` is row-rank deficient. `N` has orthonormal
/// columns, so the threshold `rank_rtol` is taken relative to `||N|| = 1`.
/// On the saturated rows the result reproduces `delta_bar`.
pub fn reduction_direction(null: &Matrix, sat: &SaturationState, rank_rtol: f64) -> Option<Vector> {
    let k = sat.k();
    if null.ncols() < k {
        return None;
    }
    let ns = null.select_rows(sat.saturated().iter());
    if rank_with_tol(&ns, Some(rank_rtol)).ok()? < k {
        return None;
    }
    let gram = &ns * ns.transpose();
    let coeff = gram.cholesky()?.solve(sat.delta_bar());
    Some(null * (ns.transpose() * coeff))
}

/// Intersection value of free element `j` for the correction
/// `u - u_reduction * delta`.
pub fn intersection_feasible(
    j: usize,
    sat: &SaturationState,
    wd: &WeightedDistance,
    u_reduction: &Vector,
    tie_tol: f64,
) -> Option<f64> {
    let t = sat.pivot();
    let pivot_rate = u_reduction[t] / wd.offset(t);
    let free_rate = -u_reduction[j] / wd.offset(j);
    crossing(wd.w[t], pivot_rate, wd.w[j], free_rate, tie_tol)
}

/// All intersection values of the free set and the smallest one.
pub fn feasible_step(sat: &SaturationState, wd: &WeightedDistance, u_reduction: Vector, tie_tol: f64) -> FeasibleStep {
    let intersections: Vec<(usize, Option<f64>)> = sat
        .free()
        .iter()
        .map(|&j| (j, intersection_feasible(j, sat, wd, &u_reduction, tie_tol)))
        .collect();
    let mut chosen: Option<(usize, f64)> = None;
    for &(j, d) in &intersections {
        if let Some(d) = d {
            if chosen.is_none_or(|(_, best)| d < best) {
                chosen = Some((j, d));
            }
        }
    }
    FeasibleStep {
        u_reduction,
        intersections,
        chosen_delta: chosen.map(|c| c.1),
        chosen_index: chosen.map(|c| c.0),
    }
}

/// Largest weighted distance in `S`. Members admitted on a tie may sit a
/// rounding step above the pivot; sizing the exit step from this value
/// parks all of them at or below 1.
pub(crate) fn top_of(sat: &SaturationState, wd: &WeightedDistance) -> f64 {
    sat.saturated().iter().map(|&i| wd.w[i]).fold(f64::NEG_INFINITY, f64::max)
}

/// Free elements whose intersection value ties the chosen minimum.
pub(crate) fn tied_with(intersections: &[(usize, Option<f64>)], delta: f64, tol: f64) -> Vec<usize> {
    intersections
        .iter()
        .filter_map(|&(j, d)| d.filter(|&d| d <= delta + tol * delta.max(1.0)).map(|_| j))
        .collect()
}

pub fn allocate_feasible(
    alloc: &Allocator,
    bounds: &Bounds,
    v_desire: &Vector,
    trace: &mut Trace,
) -> Result<FeasibleOutcome, AllocError> {
    let cfg = alloc.config;
    let pinv = alloc.pinv.as_ref().expect("feasible phase needs full row rank");
    let null = alloc.null.as_ref().expect("feasible phase needs a null space");
    let budget = alloc.m() - alloc.n();

    let mut u = pinv * v_desire;
    let mut wd = weighted_distance(&u, bounds);
    trace.initial_u = to_vec(&u);
    trace.initial_w = to_vec(&wd.w);
    if wd.norm_inf() <= 1.0 {
        return Ok(FeasibleOutcome::Done { u, iterations: 0 });
    }

    let mut sat = saturated_set(&wd, cfg.tie_tol);
    let mut iterations = 0;
    loop {
        let diagnosis = diagnose(&alloc.b, Some(null), &sat, cfg.rank_rtol)?;
        if diagnosis.condition != Condition::None {
            return Ok(FeasibleOutcome::Handoff {
                u,
                sat,
                diagnosis,
                iterations,
            });
        }
        let Some(reduction) = reduction_direction(null, &sat, cfg.rank_rtol) else {
            let diagnosis = InfeasibilityDiagnosis {
                condition: Condition::SingularNs,
                ..diagnosis
            };
            return Ok(FeasibleOutcome::Handoff {
                u,
                sat,
                diagnosis,
                iterations,
            });
        };
        if iterations >= budget {
            return Err(AllocError::IterationBudget {
                phase: Phase::Feasible,
                limit: budget,
                trace: Box::new(trace.clone()),
            });
        }

        let t = sat.pivot();
        let w_t = wd.w[t];
        let pivot_rate = 1.0 / wd.offset(t).abs();
        let step = feasible_step(&sat, &wd, reduction, cfg.tie_tol);
        iterations += 1;

        let u_start = to_vec(&u);
        let w_start = to_vec(&wd.w);
        let candidates = step
            .intersections
            .iter()
            .map(|&(index, delta)| Candidate { index, delta })
            .collect();

        let continue_delta = step
            .chosen_delta
            .filter(|&d| w_t - pivot_rate * d > 1.0 + cfg.exit_tol);
        let (applied, exit, joined) = match continue_delta {
            Some(d) => (d, false, tied_with(&step.intersections, d, cfg.tie_tol)),
            None => ((top_of(&sat, &wd) - 1.0) * wd.offset(t).abs(), true, Vec::new()),
        };
        u -= &step.u_reduction * applied;
        wd = weighted_distance(&u, bounds);

        trace.steps.push(TraceStep {
            phase: Phase::Feasible,
            saturated: sat.saturated().to_vec(),
            pivot: t,
            free_inverse: None,
            escaped: Vec::new(),
            u_start,
            w_start,
            candidates,
            min_delta: step.chosen_delta,
            joined: joined.clone(),
            exit,
            applied_delta: applied,
            u: to_vec(&u),
            w: to_vec(&wd.w),
        });

        if exit {
            return Ok(FeasibleOutcome::Done { u, iterations });
        }
        let ties = saturated_set(&wd, cfg.tie_tol);
        sat = sat.extended(joined.into_iter().chain(ties.saturated().iter().copied()), &wd);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::SolverConfig;
    use crate::linalg::null_space;

    fn paper() -> (Matrix, Bounds, Vector) {
        let b = Matrix::from_row_slice(
            3,
            5,
            &[
                1.0, 1.0, 1.0, 1.0, 1.0, //
                1.0, 1.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 0.0, 0.0,
            ],
        );
        let bounds = Bounds::from_slices(&[-1.0, 0.2, -1.0, -0.4, -0.2], &[1.2, 1.0, 0.0, 0.6, 0.1]).unwrap();
        (b, bounds, Vector::from_column_slice(&[1.4, 1.0, -1.0]))
    }

    #[test]
    fn first_iteration_matches_worked_example() {
        let (b, bounds, _) = paper();
        let n = null_space(&b).unwrap();
        let u = Vector::from_column_slice(&[-1.0, 1.0, 1.0, 0.2, 0.2]);
        let wd = weighted_distance(&u, &bounds);
        let sat = saturated_set(&wd, 1e-9);
        let r = reduction_direction(&n, &sat, 1e-9).unwrap();
        assert!((r[2] - 1.0).abs() < 1e-12);
        assert!((r[1] + 1.0).abs() < 1e-12);

        let step = feasible_step(&sat, &wd, r.clone(), 1e-9);
        let got: Vec<f64> = step.intersections.iter().map(|x| x.1.unwrap()).collect();
        for (g, e) in got.iter().zip([1.0, 4.0 / 9.0, 1.4, 2.0 / 3.0]) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
        assert_eq!(step.chosen_index, Some(1));
        let u1 = &u - &r * step.chosen_delta.unwrap();
        let expected = [-1.0, 1.0 + 4.0 / 9.0, 5.0 / 9.0, 0.2, 0.2];
        assert!(u1.iter().zip(expected).all(|(a, e)| (a - e).abs() < 1e-12));
    }

    #[test]
    fn reduction_interpolates_on_saturated_rows() {
        let (b, bounds, _) = paper();
        let n = null_space(&b).unwrap();
        // two independent saturated rows, k = m - n
        let u = Vector::from_column_slice(&[-1.0, 1.0, 1.0, 0.2, 0.2]);
        let wd = weighted_distance(&u, &bounds);
        let sat = SaturationState::from_members(vec![2, 3], 2, &wd);
        let r = reduction_direction(&n, &sat, 1e-9).unwrap();
        assert!((r[2] - sat.delta_bar()[0]).abs() < 1e-12);
        assert!((r[3] - sat.delta_bar()[1]).abs() < 1e-12);
        assert!((&b * &r).amax() < 1e-12);
    }

    #[test]
    fn dependent_columns_make_ns_singular() {
        let (b, bounds, _) = paper();
        let n = null_space(&b).unwrap();
        let u = Vector::from_column_slice(&[-1.0, 1.444, 0.556, 0.2, 0.2]);
        let wd = weighted_distance(&u, &bounds);
        let sat = SaturationState::from_members(vec![1, 2], 2, &wd);
        assert!(reduction_direction(&n, &sat, 1e-9).is_none());
    }

    #[test]
    fn zero_target_needs_no_iteration() {
        let (b, bounds, _) = paper();
        let bounds0 = Bounds::from_slices(&[-1.0; 5], &[1.0; 5]).unwrap();
        let alloc = Allocator::new(b, SolverConfig::default()).unwrap();
        let r = alloc.solve(&bounds0, &Vector::zeros(3)).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.u, Vector::zeros(5));
        drop(bounds);
    }

    #[test]
    fn worked_example_hands_off_after_one_step() {
        let (b, bounds, v) = paper();
        let alloc = Allocator::new(b, SolverConfig::default()).unwrap();
        let mut trace = Trace::default();
        match allocate_feasible(&alloc, &bounds, &v, &mut trace).unwrap() {
            FeasibleOutcome::Handoff {
                sat,
                diagnosis,
                iterations,
                ..
            } => {
                assert_eq!(iterations, 1);
                assert_eq!(sat.saturated(), &[1, 2]);
                assert_eq!(sat.pivot(), 2);
                assert_eq!(diagnosis.condition, Condition::SingularNs);
            }
            other => panic!("expected handoff, got {other:?}"),
        }
    }
}
