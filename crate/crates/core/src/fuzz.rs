//! Seeded random instances and an audit of the allocator against its
//! iteration bounds, the box constraints and the brute-force oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::allocator::{AllocationResult, Allocator, SolverConfig};
use crate::geometry::Bounds;
use crate::linalg::{Matrix, Vector};
use crate::oracle::{solve_exact, OracleSolution, OracleStatus};

/// Tolerance on `||w||_inf <= 1`.
pub const W_TOL: f64 = 1e-9;
/// Tolerance on `B u = v` for oracle-feasible instances.
pub const EQUALITY_TOL: f64 = 1e-8;
/// Tolerance on `||u||_2` against the oracle optimum.
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum InstanceKind {
    /// `v = B u0` with `u0` inside the box.
    Feasible,
    /// `v = B u0` with `u0` well outside the box.
    Infeasible,
    /// Like `Infeasible`, with one column of `B` copied onto another
    /// (possibly scaled) so that null-space rows become dependent.
    DuplicateColumns,
    /// One row of `B` is a multiple of another, so `rank(B) < n`.
    RankDeficient,
}

#[derive(Debug, Clone, Serialize)]
pub struct Instance {
    pub seed: u64,
    pub kind: InstanceKind,
    pub b: Matrix,
    pub bounds: Bounds,
    pub v_desire: Vector,
}

/// Shape and kind selection for a fuzz run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzConfig {
    pub count: usize,
    pub seed: u64,
    /// Fixed number of actuators, otherwise drawn from `4..=8`.
    pub m: Option<usize>,
    /// Fixed number of outputs, otherwise drawn from `3..m`.
    pub n: Option<usize>,
    pub feasible_only: bool,
    /// Run the 3^m oracle on every instance.
    pub oracle: bool,
    pub solver: SolverConfig,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            seed: 42,
            m: None,
            n: None,
            feasible_only: false,
            oracle: true,
            solver: SolverConfig::default(),
        }
    }
}

/// SplitMix64 finalizer; spreads consecutive indices over the seed space.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn instance_seed(base: u64, index: usize) -> u64 {
    mix(base ^ mix(index as u64))
}

impl Instance {
    /// Deterministic instance for `seed`. `m`/`n` as in [`FuzzConfig`].
    pub fn generate(seed: u64, m: Option<usize>, n: Option<usize>, feasible_only: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = m.unwrap_or_else(|| rng.random_range(4..=8));
        let n = n.unwrap_or_else(|| rng.random_range(3..m));
        let kind = if feasible_only {
            InstanceKind::Feasible
        } else {
            match rng.random_range(0..10) {
                0..=3 => InstanceKind::Feasible,
                4..=6 => InstanceKind::Infeasible,
                7..=8 => InstanceKind::DuplicateColumns,
                _ => InstanceKind::RankDeficient,
            }
        };
        let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        let mut b = Matrix::from_fn(n, m, |_, _| unit.sample(&mut rng));
        match kind {
            InstanceKind::DuplicateColumns => {
                let copies = rng.random_range(1..=(m - n).max(1));
                for _ in 0..copies {
                    let src = rng.random_range(0..m);
                    let dst = (src + rng.random_range(1..m)) % m;
                    let scale = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.5..2.0) };
                    let col = b.column(src) * scale;
                    b.set_column(dst, &col);
                }
            }
            InstanceKind::RankDeficient => {
                let src = rng.random_range(0..n);
                let dst = (src + rng.random_range(1..n)) % n;
                let row = b.row(src) * rng.random_range(-2.0..2.0);
                b.set_row(dst, &row);
            }
            _ => {}
        }

        let lower = Vector::from_fn(m, |_, _| rng.random_range(-1.5..0.3));
        let upper = Vector::from_fn(m, |i, _| lower[i] + rng.random_range(0.2..2.0));
        let bounds = Bounds::new(lower, upper).expect("positive widths");

        let u0 = match kind {
            InstanceKind::Feasible => {
                Vector::from_fn(m, |i, _| rng.random_range(bounds.lower()[i]..bounds.upper()[i]))
            }
            _ => {
                let spread = rng.random_range(1.5..4.0);
                Vector::from_fn(m, |i, _| {
                    let c = 0.5 * (bounds.lower()[i] + bounds.upper()[i]);
                    let h = 0.5 * (bounds.upper()[i] - bounds.lower()[i]);
                    c + h * spread * unit.sample(&mut rng)
                })
            }
        };
        let v_desire = &b * u0;
        Self {
            seed,
            kind,
            b,
            bounds,
            v_desire,
        }
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }
}

/// `clip(B^+ v)`, the naive baseline.
pub fn clipped_pinv(b: &Matrix, v: &Vector, bounds: &Bounds) -> Vector {
    let pinv = b.clone().pseudo_inverse(1e-12).expect("nonnegative eps");
    bounds.clip(&(pinv * v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
pub enum ViolationKind {
    SolverError,
    FeasibleIterationBound,
    TotalIterationBound,
    WeightedDistance,
    /// Oracle says feasible, `B u != v`.
    Equality,
    /// Oracle optimum has at most `m - n` active constraints and `||u||`
    /// differs from it.
    NormGap,
    /// Residual larger than the clipped pseudo-inverse.
    Baseline,
}

impl ViolationKind {
    /// Violations of the iteration bounds, box constraints or solver
    /// failures, as opposed to optimality comparisons against the oracle.
    pub fn is_hard(self) -> bool {
        matches!(
            self,
            Self::SolverError | Self::FeasibleIterationBound | Self::TotalIterationBound | Self::WeightedDistance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub seed: u64,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceOutcome {
    pub index: usize,
    pub seed: u64,
    pub kind: InstanceKind,
    pub m: usize,
    pub n: usize,
    pub iterations: Option<usize>,
    pub feasible_iterations: Option<usize>,
    pub norm_inf_w: Option<f64>,
    pub oracle_status: Option<OracleStatus>,
    /// `||u||_2 - ||u*||_2` on oracle-feasible instances.
    pub norm_gap: Option<f64>,
    /// `r - r*` on oracle-infeasible instances.
    pub residual_gap: Option<f64>,
    pub violations: Vec<Violation>,
}

pub fn audit_instance(index: usize, inst: &Instance, solver: SolverConfig, oracle: bool) -> InstanceOutcome {
    let mut out = InstanceOutcome {
        index,
        seed: inst.seed,
        kind: inst.kind,
        m: inst.m(),
        n: inst.n(),
        iterations: None,
        feasible_iterations: None,
        norm_inf_w: None,
        oracle_status: None,
        norm_gap: None,
        residual_gap: None,
        violations: Vec::new(),
    };
    let mut flag = |kind, detail: String| {
        out.violations.push(Violation {
            index,
            seed: inst.seed,
            kind,
            detail,
        })
    };
    let result: AllocationResult = match Allocator::new(inst.b.clone(), solver).and_then(|a| a.solve(&inst.bounds, &inst.v_desire)) {
        Ok(r) => r,
        Err(e) => {
            flag(ViolationKind::SolverError, e.to_string());
            return out;
        }
    };
    let (m, n) = (inst.m(), inst.n());
    if result.feasible_iterations > m - n {
        flag(
            ViolationKind::FeasibleIterationBound,
            format!("{} feasible iterations, bound {}", result.feasible_iterations, m - n),
        );
    }
    if result.iterations > m {
        flag(
            ViolationKind::TotalIterationBound,
            format!("{} iterations, bound {m}", result.iterations),
        );
    }
    let w = result.norm_inf_w();
    if !(w <= 1.0 + W_TOL) {
        flag(ViolationKind::WeightedDistance, format!("||w||_inf = {w}"));
    }

    let mut extra = Vec::new();
    let mut oracle_status = None;
    let mut norm_gap = None;
    let mut residual_gap = None;
    if oracle {
        if let Ok(sol) = solve_exact(&inst.b, &inst.v_desire, &inst.bounds) {
            oracle_status = Some(sol.status);
            compare(inst, &result, &sol, &mut extra, &mut norm_gap, &mut residual_gap);
        }
    }
    for (kind, detail) in extra {
        flag(kind, detail);
    }
    out.iterations = Some(result.iterations);
    out.feasible_iterations = Some(result.feasible_iterations);
    out.norm_inf_w = Some(w);
    out.oracle_status = oracle_status;
    out.norm_gap = norm_gap;
    out.residual_gap = residual_gap;
    out
}

fn compare(
    inst: &Instance,
    result: &AllocationResult,
    sol: &OracleSolution,
    found: &mut Vec<(ViolationKind, String)>,
    norm_gap: &mut Option<f64>,
    residual_gap: &mut Option<f64>,
) {
    let (m, n) = (inst.m(), inst.n());
    match sol.status {
        OracleStatus::Feasible => {
            let err = (&inst.b * &result.u - &inst.v_desire).amax();
            if !(err <= EQUALITY_TOL) {
                found.push((ViolationKind::Equality, format!("||B u - v||_inf = {err:e}")));
            }
            let gap = result.u.norm() - sol.u.norm();
            *norm_gap = Some(gap);
            if sol.active_set.len() <= m - n && !(gap.abs() <= NORM_TOL) {
                found.push((
                    ViolationKind::NormGap,
                    format!("||u|| - ||u*|| = {gap:e} with {} active", sol.active_set.len()),
                ));
            }
        }
        OracleStatus::Infeasible => {
            let baseline = (&inst.v_desire - &inst.b * clipped_pinv(&inst.b, &inst.v_desire, &inst.bounds)).norm();
            if result.residual > baseline + 1e-9 {
                found.push((
                    ViolationKind::Baseline,
                    format!("residual {:e} above clipped pseudo-inverse {:e}", result.residual, baseline),
                ));
            }
            *residual_gap = Some(result.residual - sol.residual);
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GapStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
}

impl GapStats {
    fn from(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Self::default();
        }
        Self {
            count: v.len(),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FuzzReport {
    pub config: FuzzConfig,
    pub instances: usize,
    pub by_kind: Vec<(InstanceKind, usize)>,
    pub oracle_feasible: usize,
    pub oracle_infeasible: usize,
    pub max_feasible_iterations_over_bound: i64,
    pub max_iterations_over_bound: i64,
    pub max_norm_inf_w: f64,
    /// `||u|| - ||u*||` over oracle-feasible instances.
    pub norm_gap: GapStats,
    /// `r - r*` over oracle-infeasible instances.
    pub residual_gap: GapStats,
    pub violations: Vec<Violation>,
}

impl FuzzReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn hard_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.kind.is_hard())
    }

    pub fn offending_seeds(&self, hard_only: bool) -> Vec<u64> {
        let mut seeds: Vec<u64> = self
            .violations
            .iter()
            .filter(|v| !hard_only || v.kind.is_hard())
            .map(|v| v.seed)
            .collect();
        seeds.dedup();
        seeds
    }
}

/// Runs `config.count` instances in parallel; the report is independent of
/// the thread count.
pub fn run(config: &FuzzConfig) -> (FuzzReport, Vec<InstanceOutcome>) {
    let outcomes: Vec<InstanceOutcome> = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let seed = instance_seed(config.seed, i);
            let inst = Instance::generate(seed, config.m, config.n, config.feasible_only);
            audit_instance(i, &inst, config.solver, config.oracle)
        })
        .collect();

    let kinds = [
        InstanceKind::Feasible,
        InstanceKind::Infeasible,
        InstanceKind::DuplicateColumns,
        InstanceKind::RankDeficient,
    ];
    let by_kind = kinds
        .iter()
        .map(|&k| (k, outcomes.iter().filter(|o| o.kind == k).count()))
        .collect();
    let over = |f: fn(&InstanceOutcome) -> Option<i64>| outcomes.iter().filter_map(f).max().unwrap_or(i64::MIN);
    let report = FuzzReport {
        config: config.clone(),
        instances: outcomes.len(),
        by_kind,
        oracle_feasible: outcomes.iter().filter(|o| o.oracle_status == Some(OracleStatus::Feasible)).count(),
        oracle_infeasible: outcomes
            .iter()
            .filter(|o| o.oracle_status == Some(OracleStatus::Infeasible))
            .count(),
        max_feasible_iterations_over_bound: over(|o| o.feasible_iterations.map(|k| k as i64 - (o.m - o.n) as i64)),
        max_iterations_over_bound: over(|o| o.iterations.map(|k| k as i64 - o.m as i64)),
        max_norm_inf_w: outcomes.iter().filter_map(|o| o.norm_inf_w).fold(0.0, f64::max),
        norm_gap: GapStats::from(outcomes.iter().filter_map(|o| o.norm_gap)),
        residual_gap: GapStats::from(outcomes.iter().filter_map(|o| o.residual_gap)),
        violations: outcomes.iter().flat_map(|o| o.violations.iter().cloned()).collect(),
    };
    (report, outcomes)
}
