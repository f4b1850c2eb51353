use pinv_alloc::fuzz::{instance_seed, Instance};
use pinv_alloc::linalg::{null_space, Matrix, Vector};
use pinv_alloc::oracle::{cross_check, solve_exact, OracleStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn small_instance(i: usize) -> Instance {
    // m <= 6 keeps the iterative cross-solver fast
    let seed = instance_seed(500, i);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(4..=6);
    let n = rng.random_range(3..m);
    Instance::generate(seed, Some(m), Some(n), false)
}

#[test]
fn enumeration_agrees_with_iterative_solvers() {
    let gaps: Vec<(usize, OracleStatus, f64)> = (0..500)
        .into_par_iter()
        .map(|i| {
            let inst = small_instance(i);
            let exact = solve_exact(&inst.b, &inst.v_desire, &inst.bounds).unwrap();
            let (_, gap) = cross_check(&inst.b, &inst.v_desire, &inst.bounds, &exact);
            (i, exact.status, gap)
        })
        .collect();
    let bad: Vec<_> = gaps.iter().filter(|g| g.2.is_nan() || g.2 > 1e-5).collect();
    let feasible = gaps.iter().filter(|g| g.1 == OracleStatus::Feasible).count();
    assert!(feasible > 50 && feasible < 450, "{feasible} feasible");
    assert!(bad.is_empty(), "{} disagreements, first {:?}", bad.len(), &bad[..bad.len().min(5)]);
}

/// Random directions that keep `u` in the box (and, when feasible, on
/// `B u = v`) never improve the objective.
#[test]
fn oracle_solutions_are_locally_optimal() {
    for i in 0..100 {
        let inst = small_instance(i);
        let sol = solve_exact(&inst.b, &inst.v_desire, &inst.bounds).unwrap();
        let m = inst.m();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let basis: Matrix = match sol.status {
            OracleStatus::Feasible => match null_space(&inst.b) {
                Ok(n) => n,
                Err(_) => continue,
            },
            OracleStatus::Infeasible => Matrix::identity(m, m),
        };
        let objective = |u: &Vector| match sol.status {
            OracleStatus::Feasible => u.norm_squared(),
            OracleStatus::Infeasible => (&inst.v_desire - &inst.b * u).norm_squared(),
        };
        let base = objective(&sol.u);
        let mut tried = 0;
        while tried < 100 {
            let z = Vector::from_fn(basis.ncols(), |_, _| rng.random_range(-1.0..1.0));
            let d = &basis * z;
            let eps = 1e-4;
            let moved = &sol.u + &d * eps;
            let inside = (0..m).all(|k| moved[k] >= inst.bounds.lower()[k] - 1e-12 && moved[k] <= inst.bounds.upper()[k] + 1e-12);
            if !inside {
                // directions leaving the box are not admissible; try the
                // projection onto the active faces instead
                let mut d2 = d.clone();
                for &(k, _) in &sol.active_set {
                    d2[k] = 0.0;
                }
                if sol.status == OracleStatus::Feasible && (&inst.b * &d2).amax() > 1e-12 {
                    tried += 1;
                    continue;
                }
                let moved2 = &sol.u + &d2 * eps;
                let inside2 =
                    (0..m).all(|k| moved2[k] >= inst.bounds.lower()[k] - 1e-12 && moved2[k] <= inst.bounds.upper()[k] + 1e-12);
                if inside2 {
                    assert!(objective(&moved2) >= base - 1e-12, "instance {i}: objective drops along face direction");
                }
                tried += 1;
                continue;
            }
            assert!(objective(&moved) >= base - 1e-12, "instance {i}: objective drops");
            tried += 1;
        }
    }
}
