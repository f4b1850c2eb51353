use pinv_alloc::allocator::{Allocator, Phase, SolverConfig};
use pinv_alloc::fuzz::Instance;
use pinv_alloc::geometry::{saturated_set, weighted_distance, Bounds};
use pinv_alloc::infeasible::FreeInverseCase;
use pinv_alloc::linalg::{null_space, pinv_right, rank_relative, singular_inverse, svd, Matrix, Vector};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1.0f64..1.0, r * c).prop_map(move |d| Matrix::from_row_slice(r, c, &d))
    })
}

/// Wide matrix with full row rank almost surely.
fn wide(max_m: usize) -> impl Strategy<Value = Matrix> {
    (1..max_m).prop_flat_map(move |n| {
        (Just(n), n + 1..=max_m).prop_flat_map(|(n, m)| {
            prop::collection::vec(-1.0f64..1.0, n * m).prop_map(move |d| Matrix::from_row_slice(n, m, &d))
        })
    })
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi.
fn sym_eigenvalues(mut a: Matrix) -> Vec<f64> {
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = Matrix::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s;
                rot[(q, p)] = -s;
                a = rot.transpose() * &a * &rot;
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn bounds_and_u(m: usize) -> impl Strategy<Value = (Bounds, Vector)> {
    (
        prop::collection::vec(-2.0f64..1.0, m),
        prop::collection::vec(0.05f64..2.0, m),
        prop::collection::vec(-4.0f64..4.0, m),
    )
        .prop_map(|(lo, width, u)| {
            let lower = Vector::from_vec(lo);
            let upper = &lower + Vector::from_vec(width);
            (Bounds::new(lower, upper).unwrap(), Vector::from_vec(u))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn svd_reconstructs_and_is_orthonormal(a in matrix(10, 10)) {
        let d = svd(&a).unwrap();
        let (r, c) = a.shape();
        prop_assert!((d.reconstruct() - &a).norm() <= 1e-12 * a.norm().max(1.0));
        prop_assert!((d.u.transpose() * &d.u - Matrix::identity(r, r)).amax() < 1e-12);
        prop_assert!((d.v.transpose() * &d.v - Matrix::identity(c, c)).amax() < 1e-12);
        prop_assert!(d.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singular_values_match_gram_eigenvalues(a in matrix(6, 6)) {
        let d = svd(&a).unwrap();
        let gram = if a.nrows() <= a.ncols() { &a * a.transpose() } else { a.transpose() * &a };
        let ev = sym_eigenvalues(gram);
        for (s, e) in d.singular_values.iter().zip(ev) {
            prop_assert!((s * s - e).abs() < 1e-10, "{} vs {}", s * s, e);
        }
    }

    #[test]
    fn row_deletion_never_raises_extreme_singular_values(a in matrix(10, 6), mask in prop::collection::vec(any::<bool>(), 10)) {
        prop_assume!(a.nrows() > a.ncols());
        let keep: Vec<usize> = (0..a.nrows()).filter(|&i| mask[i]).collect();
        prop_assume!(!keep.is_empty() && keep.len() < a.nrows());
        let sub = a.select_rows(keep.iter());
        let s = svd(&a).unwrap().singular_values;
        let s2 = svd(&sub).unwrap().singular_values;
        let min2 = if sub.nrows() < sub.ncols() { 0.0 } else { s2.min() };
        prop_assert!(min2 <= s.min() + 1e-12);
        prop_assert!(s2.max() <= s.max() + 1e-12);
    }

    #[test]
    fn pinv_right_is_minimum_norm(b in wide(8), seed in any::<u64>()) {
        prop_assume!(rank_relative(&b, 1e-6).unwrap() == b.nrows());
        let v = Vector::from_fn(b.nrows(), |i, _| ((seed >> (i % 60)) & 0xff) as f64 / 128.0 - 1.0);
        let u = pinv_right(&b).unwrap() * &v;
        prop_assert!((&b * &u - &v).amax() < 1e-9);
        let n = null_space(&b).unwrap();
        prop_assert!((&b * &n).amax() < 1e-10);
        for k in 0..20u64 {
            let z = Vector::from_fn(n.ncols(), |i, _| (((seed.wrapping_mul(k + 7)) >> (i % 50)) & 0x3ff) as f64 / 256.0 - 2.0);
            prop_assert!(u.norm() <= (&u + &n * z).norm() + 1e-12);
        }
    }

    #[test]
    fn singular_inverse_is_a_generalized_inverse(b in wide(6), dup in 0usize..6) {
        // force rank deficiency by copying a row
        let mut b = b;
        prop_assume!(b.nrows() >= 2);
        let src = dup % b.nrows();
        let dst = (src + 1) % b.nrows();
        let row = b.row(src).into_owned();
        b.set_row(dst, &row);
        let g = singular_inverse(&b, None).unwrap();
        prop_assert_eq!(g.shape(), (b.ncols(), b.nrows()));
        prop_assert!((&b * &g * &b - &b).amax() < 1e-9);
    }

    #[test]
    fn inside_bounds_iff_w_at_most_one(bu in (1usize..8).prop_flat_map(bounds_and_u)) {
        let (bounds, u) = bu;
        let w = weighted_distance(&u, &bounds);
        let inside = (0..u.len()).all(|i| u[i] >= bounds.lower()[i] && u[i] <= bounds.upper()[i]);
        prop_assert_eq!(inside, w.norm_inf() <= 1.0);
        prop_assert!(w.w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn w_is_affine_invariant(bu in (1usize..8).prop_flat_map(bounds_and_u), a in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let (bounds, u) = bu;
        let map = |x: &Vector| x.map(|t| a * t + shift);
        let moved = Bounds::new(map(bounds.lower()), map(bounds.upper())).unwrap();
        let w1 = weighted_distance(&u, &bounds).w;
        let w2 = weighted_distance(&map(&u), &moved).w;
        prop_assert!((w1 - w2).amax() < 1e-9);
    }

    #[test]
    fn saturated_set_partitions_and_grows_with_tolerance(bu in (1usize..8).prop_flat_map(bounds_and_u), tol in 0.0f64..0.5) {
        let (bounds, u) = bu;
        let wd = weighted_distance(&u, &bounds);
        let s = saturated_set(&wd, tol);
        let mut all: Vec<usize> = s.saturated().iter().chain(s.free()).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..u.len()).collect::<Vec<_>>());
        prop_assert!(s.contains(s.pivot()));
        let wider = saturated_set(&wd, tol * 1.5 + 1e-6);
        prop_assert!(s.saturated().iter().all(|&i| wider.contains(i)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    /// Allocator-level invariants on generated instances.
    #[test]
    fn allocation_invariants(seed in any::<u64>()) {
        let inst = Instance::generate(seed, None, None, false);
        let (n, m) = inst.b.shape();
        let alloc = Allocator::new(inst.b.clone(), SolverConfig::default()).unwrap();
        let r = alloc.solve(&inst.bounds, &inst.v_desire).unwrap();
        prop_assert!(r.norm_inf_w() <= 1.0 + 1e-9);
        prop_assert!(r.feasible_iterations <= m - n);
        prop_assert!(r.iterations <= m);

        let mut prev_w = f64::INFINITY;
        for st in r.trace.steps.iter().filter(|s| s.phase == Phase::Feasible) {
            let u = Vector::from_column_slice(&st.u);
            prop_assert!((&inst.b * &u - &inst.v_desire).amax() < 1e-8);
            let w_top = st.w.iter().copied().fold(0.0, f64::max);
            prop_assert!(w_top <= prev_w + 1e-9);
            prev_w = w_top;
            if !st.exit {
                for &j in &st.joined {
                    prop_assert!((st.w[j] - st.w[st.pivot]).abs() < 1e-8);
                }
            }
        }
        let infeasible: Vec<_> = r.trace.steps.iter().filter(|s| s.phase == Phase::Infeasible).collect();
        let all_full = !infeasible.is_empty()
            && infeasible.iter().all(|s| s.free_inverse.as_ref().map(|f| f.case) == Some(FreeInverseCase::FullRank));
        if all_full {
            prop_assert!((&inst.b * &r.u - &inst.v_desire).amax() < 1e-8, "residual {}", r.residual);
        }
    }

    /// `||u||_2` does not decrease across feasible-phase modifications.
    #[test]
    fn feasible_norm_is_nondecreasing(seed in any::<u64>()) {
        let inst = Instance::generate(seed, None, None, true);
        let alloc = Allocator::new(inst.b.clone(), SolverConfig::default()).unwrap();
        let r = alloc.solve(&inst.bounds, &inst.v_desire).unwrap();
        let mut prev = Vector::from_column_slice(&r.trace.initial_u).norm();
        for st in r.trace.steps.iter().filter(|s| s.phase == Phase::Feasible) {
            let now = Vector::from_column_slice(&st.u).norm();
            prop_assert!(now >= prev - 1e-9, "{} -> {}", prev, now);
            prev = now;
        }
    }
}
