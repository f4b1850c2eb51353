//! The built-in five-actuator example and its expected trace.

use pinv_alloc::{AllocationProblem, AllocationResult, Bounds, Condition, FreeInverseCase, Matrix, Vector};
use serde::Serialize;

pub const TOLERANCE: f64 = 1e-3;

pub fn problem() -> AllocationProblem {
    let b = Matrix::from_row_slice(
        3,
        5,
        &[
            1.0, 1.0, 1.0, 1.0, 1.0, //
            1.0, 1.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, 0.0,
        ],
    );
    let bounds = Bounds::from_slices(&[-1.0, 0.2, -1.0, -0.4, -0.2], &[1.2, 1.0, 0.0, 0.6, 0.1]).expect("valid bounds");
    AllocationProblem::new(b, bounds, Vector::from_column_slice(&[1.4, 1.0, -1.0])).expect("consistent sizes")
}

/// One expected quantity, in trace order.
pub struct Expectation {
    pub name: &'static str,
    pub values: Vec<f64>,
}

fn e(name: &'static str, values: &[f64]) -> Expectation {
    Expectation {
        name,
        values: values.to_vec(),
    }
}

/// Published values, except that the first entry of `w2` is the one
/// implied by `u2` (0.927).
pub fn expectations() -> Vec<Expectation> {
    vec![
        e("initial u", &[-1.0, 1.0, 1.0, 0.2, 0.2]),
        e("initial w", &[1.0, 1.0, 3.0, 0.2, 1.667]),
        e("iteration 1 intersections", &[1.0, 0.444, 1.4, 0.667]),
        e("u1", &[-1.0, 1.444, 0.556, 0.2, 0.2]),
        e("augmented free inverse", &[0.0, 0.5, 0.5, 0.5, -0.25, -0.25, 0.5, -0.25, -0.25]),
        e("iteration 2 intersections", &[0.940, 0.659, 0.088]),
        e("u2", &[-0.92, 1.373, 0.467, 0.24, 0.24]),
        e("w2", &[0.927, 1.933, 1.933, 0.28, 1.933]),
        e("least-squares free inverse", &[0.0, 0.5, 0.5, 1.0, -0.5, -0.5]),
        e("iteration 3 delta", &[0.376]),
        e("u3", &[-0.581, 1.072, 0.091, 0.691, 0.127]),
        e("w3", &[0.62, 1.182, 1.182, 1.182, 1.182]),
        e("final delta", &[0.0909]),
        e("u4", &[-0.433, 1.0, 0.0, 0.6, 0.1]),
    ]
}

fn observed(result: &AllocationResult, name: &str) -> Option<Vec<f64>> {
    let t = &result.trace;
    let step = |i: usize| t.steps.get(i);
    let deltas = |i: usize| step(i).map(|s| s.candidates.iter().map(|c| c.delta.unwrap_or(f64::NAN)).collect());
    let inverse = |i: usize| step(i).and_then(|s| s.free_inverse.as_ref()).map(|f| f.rows.concat());
    match name {
        "initial u" => Some(t.initial_u.clone()),
        "initial w" => Some(t.initial_w.clone()),
        "iteration 1 intersections" => deltas(0),
        "u1" => step(0).map(|s| s.u.clone()),
        "augmented free inverse" => inverse(1),
        "iteration 2 intersections" => deltas(1),
        "u2" => step(1).map(|s| s.u.clone()),
        "w2" => step(1).map(|s| s.w.clone()),
        "least-squares free inverse" => inverse(2),
        "iteration 3 delta" => step(2).map(|s| vec![s.applied_delta]),
        "u3" => step(2).map(|s| s.u.clone()),
        "w3" => step(2).map(|s| s.w.clone()),
        "final delta" => step(3).map(|s| vec![s.applied_delta]),
        "u4" => step(3).map(|s| s.u.clone()),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub passed: bool,
    pub checked: usize,
    pub tolerance: f64,
    pub first_divergence: Option<String>,
}

/// Compares the run against the expectations in order; `perturb` shifts
/// the first expected value (negative control).
pub fn self_check(result: &AllocationResult, perturb: f64) -> CheckReport {
    let mut exp = expectations();
    exp[0].values[0] += perturb;
    let mut checked = 0;
    let fail = |msg: String, checked| CheckReport {
        passed: false,
        checked,
        tolerance: TOLERANCE,
        first_divergence: Some(msg),
    };

    let t = &result.trace;
    if t.steps.len() != 4 {
        return fail(format!("expected 4 iterations, got {}", t.steps.len()), checked);
    }
    let structural = [
        (
            "handoff on singular N_S at S = {2, 3}",
            t.handoff.map(|h| h.condition) == Some(Condition::SingularNs) && t.steps[1].saturated == vec![1, 2],
        ),
        (
            "iteration 2 uses the augmented inverse",
            t.steps[1].free_inverse.as_ref().map(|f| f.case) == Some(FreeInverseCase::Augmented),
        ),
        (
            "iteration 3 uses the least-squares inverse",
            t.steps[2].free_inverse.as_ref().map(|f| f.case) == Some(FreeInverseCase::LeastSquares),
        ),
    ];
    for (name, ok) in structural {
        if !ok {
            return fail(name.to_string(), checked);
        }
        checked += 1;
    }
    for x in &exp {
        let got = observed(result, x.name).unwrap_or_default();
        let ok = got.len() == x.values.len() && got.iter().zip(&x.values).all(|(g, v)| (g - v).abs() <= TOLERANCE);
        if !ok {
            return fail(
                format!("{}: got {}, expected {}", x.name, crate::format::vec(&got), crate::format::vec(&x.values)),
                checked,
            );
        }
        checked += 1;
    }
    CheckReport {
        passed: true,
        checked,
        tolerance: TOLERANCE,
        first_divergence: None,
    }
}
