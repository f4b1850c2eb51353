use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pinv_alloc::allocator::{AllocError, Phase};
use pinv_alloc::document::ProblemDocument;
use pinv_alloc::dynamic::{self, DynamicError};
use pinv_alloc::fuzz::{self, FuzzConfig};
use pinv_alloc::slv::{self, SetPoint, SimConfig, SimError, SlvModel, TraceFiles, Wiring};
use pinv_alloc::{AllocationResult, Allocator, Bounds, Condition, Feasibility, SolverConfig, Trace};
use serde::Serialize;

mod example;
mod format;

use format::{dvec, rows, set, sig, vec};

const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

#[derive(Parser)]
#[command(name = "pinv-alloc", version, about = "Constrained control allocation by pseudo-inverse and null-space corrections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in five-actuator example and check its trace
    Example(ExampleArgs),
    /// Solve an allocation problem read from a TOML file
    Allocate(AllocateArgs),
    /// Run the closed-loop launch-vehicle simulation and write CSV traces
    Simulate(SimulateArgs),
    /// Audit the allocator on seeded random instances
    Fuzz(FuzzArgs),
}

#[derive(Args)]
struct ExampleArgs {
    /// Emit JSON instead of text
    #[arg(long)]
    json: bool,
    /// Shift the first expected value by this amount (negative control)
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_expectation: f64,
}

#[derive(Args)]
struct AllocateArgs {
    /// Problem document
    file: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum WiringArg {
    Equilibrium,
    Feedforward,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model document; the bundled vehicle data is used when omitted
    #[arg(long)]
    model: Option<PathBuf>,
    /// Sampling period in seconds
    #[arg(long = "T", default_value_t = 0.01)]
    period: f64,
    /// Simulated time in seconds
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// RK4 steps per sampling period
    #[arg(long, default_value_t = 4)]
    substeps: usize,
    /// Output prefix; writes <prefix>_trace.csv, _states.csv, _inputs.csv, _rates.csv
    #[arg(long, default_value = "slv")]
    out: String,
    /// Set-point change as TIME:R1,R2,R3 (seconds, degrees); repeatable,
    /// replaces the default schedule
    #[arg(long = "set-point", value_parser = parse_set_point)]
    set_points: Vec<SetPoint>,
    #[arg(long, value_enum, default_value_t = WiringArg::Equilibrium)]
    wiring: WiringArg,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Fixed number of actuators (4..=8)
    #[arg(long)]
    m: Option<usize>,
    /// Fixed number of outputs (3..m)
    #[arg(long)]
    n: Option<usize>,
    /// Only instances with an in-bounds exact solution
    #[arg(long)]
    feasible_only: bool,
    /// Skip the brute-force comparison
    #[arg(long)]
    no_oracle: bool,
    /// Also fail on oracle findings (equality, norm gap, baseline)
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    json: bool,
}

fn parse_set_point(s: &str) -> Result<SetPoint, String> {
    let (t, r) = s.split_once(':').ok_or("expected TIME:R1,R2,R3")?;
    let time: f64 = t.trim().parse().map_err(|e| format!("time: {e}"))?;
    let vals: Vec<f64> = r
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("set point: {e}")))
        .collect::<Result<_, _>>()?;
    let [a, b, c] = vals[..] else {
        return Err(format!("expected 3 set-point values, got {}", vals.len()));
    };
    let d = std::f64::consts::PI / 180.0;
    Ok(SetPoint {
        time,
        r: [a * d, b * d, c * d],
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Example(a) => cmd_example(a),
        Command::Allocate(a) => cmd_allocate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fuzz(a) => cmd_fuzz(a),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn alloc_exit(e: &AllocError) -> u8 {
    match e {
        AllocError::Dimension(_) | AllocError::Bounds(_) => EXIT_INPUT,
        _ => EXIT_SOLVER,
    }
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout(), "{text}");
}

// ------------------------------------------------------------------ output

#[derive(Serialize)]
struct ResultJson<'a> {
    u: Vec<f64>,
    w: Vec<f64>,
    feasibility: Feasibility,
    residual: f64,
    iterations: usize,
    feasible_iterations: usize,
    u_min: Vec<f64>,
    u_max: Vec<f64>,
    trace: &'a Trace,
}

impl<'a> ResultJson<'a> {
    fn new(r: &'a AllocationResult, bounds: &Bounds) -> Self {
        Self {
            u: r.u.iter().copied().collect(),
            w: r.w.iter().copied().collect(),
            feasibility: r.feasibility,
            residual: r.residual,
            iterations: r.iterations,
            feasible_iterations: r.feasible_iterations,
            u_min: bounds.lower().iter().copied().collect(),
            u_max: bounds.upper().iter().copied().collect(),
            trace: &r.trace,
        }
    }
}

fn condition_text(c: Condition) -> &'static str {
    match c {
        Condition::None => "none",
        Condition::RankDeficientB => "rank(B) < n",
        Condition::TooManySaturated => "more saturated elements than null-space dimensions",
        Condition::SingularNs => "saturated rows of the null-space basis are dependent",
    }
}

fn print_trace(r: &AllocationResult) {
    let t = &r.trace;
    println!("initial u = {}", vec(&t.initial_u));
    println!("initial w = {}", vec(&t.initial_w));
    let mut handoff_printed = false;
    for (i, s) in t.steps.iter().enumerate() {
        if s.phase == Phase::Infeasible && !handoff_printed {
            if let Some(h) = t.handoff {
                let ns = h.rank_ns.map_or(String::new(), |r| format!(", rank(N_S) = {r}"));
                println!(
                    "handoff: {} (k = {}, m - n = {}, rank(B) = {}{ns})",
                    condition_text(h.condition),
                    h.k,
                    h.dof,
                    h.rank_b
                );
            }
            handoff_printed = true;
        }
        let phase = match s.phase {
            Phase::Feasible => "feasible",
            Phase::Infeasible => "infeasible",
        };
        println!("iteration {} ({phase})", i + 1);
        if !s.escaped.is_empty() {
            println!("  escaped elements moved to S: {}", set(&s.escaped));
        }
        println!("  S = {}, pivot {}", set(&s.saturated), s.pivot + 1);
        if let Some(f) = &s.free_inverse {
            println!("  free inverse ({:?}):", f.case);
            println!("{}", rows(&f.rows, "    "));
        }
        let cands: Vec<String> = s
            .candidates
            .iter()
            .map(|c| format!("u{}: {}", c.index + 1, c.delta.map_or("none".into(), sig)))
            .collect();
        println!("  intersections: {}", if cands.is_empty() { "none".into() } else { cands.join(", ") });
        match (s.exit, s.min_delta) {
            (false, Some(d)) => println!("  delta = {} (joins S: {})", sig(d), set(&s.joined)),
            _ => println!("  final delta = {} (saturated elements parked on their borders)", sig(s.applied_delta)),
        }
        println!("  u = {}", vec(&s.u));
        println!("  w = {}", vec(&s.w));
    }
    let class = match r.feasibility {
        Feasibility::Feasible => "feasible",
        Feasibility::Infeasible => "infeasible",
    };
    println!(
        "result: {class}, {} iterations ({} feasible), residual {}",
        r.iterations,
        r.feasible_iterations,
        sig(r.residual)
    );
    println!("u = {}", dvec(&r.u));
    println!("w = {}", dvec(&r.w));
}

// ------------------------------------------------------------------ commands

fn cmd_example(a: ExampleArgs) -> ExitCode {
    let p = example::problem();
    let result = match Allocator::new(p.b.clone(), SolverConfig::default()).and_then(|al| al.solve(&p.bounds, &p.v_desire)) {
        Ok(r) => r,
        Err(e) => return fail(alloc_exit(&e), e),
    };
    let check = example::self_check(&result, a.perturb_expectation);
    if a.json {
        #[derive(Serialize)]
        struct Out<'a> {
            result: ResultJson<'a>,
            self_check: &'a example::CheckReport,
        }
        print_json(&Out {
            result: ResultJson::new(&result, &p.bounds),
            self_check: &check,
        });
    } else {
        println!("B = ");
        println!("{}", rows(&format::matrix_rows(&p.b), "  "));
        println!("u_min = {}", dvec(p.bounds.lower()));
        println!("u_max = {}", dvec(p.bounds.upper()));
        println!("v_desire = {}", dvec(&p.v_desire));
        print_trace(&result);
        match &check.first_divergence {
            None => println!("self-check: {} items within {}: PASS", check.checked, check.tolerance),
            Some(d) => println!("self-check: FAIL after {} items; first divergence: {d}", check.checked),
        }
    }
    if check.passed {
        ExitCode::SUCCESS
    } else {
        if a.json {
            eprintln!("self-check failed: {}", check.first_divergence.as_deref().unwrap_or(""));
        }
        ExitCode::from(EXIT_MISMATCH)
    }
}

fn cmd_allocate(a: AllocateArgs) -> ExitCode {
    let doc = match ProblemDocument::load(&a.file) {
        Ok(d) => d,
        Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", a.file.display())),
    };
    let allocator = match Allocator::new(doc.b.clone(), SolverConfig::default()) {
        Ok(al) => al,
        Err(e) => return fail(alloc_exit(&e), e),
    };
    let (result, bounds) = match &doc.rate {
        None => match allocator.solve(&doc.bounds, &doc.v_desire) {
            Ok(r) => (r, doc.bounds.clone()),
            Err(e) => return fail(alloc_exit(&e), e),
        },
        Some(rate) => {
            let mut state = rate.state.clone();
            match dynamic::step(&allocator, &doc.v_desire, &rate.limits, &mut state) {
                Ok(out) => out,
                Err(DynamicError::Alloc(e)) => return fail(alloc_exit(&e), e),
                Err(e) => return fail(EXIT_INPUT, e),
            }
        }
    };
    if a.json {
        print_json(&ResultJson::new(&result, &bounds));
    } else {
        if doc.rate.is_some() {
            println!("effective u_min = {}", dvec(bounds.lower()));
            println!("effective u_max = {}", dvec(bounds.upper()));
        }
        print_trace(&result);
    }
    ExitCode::SUCCESS
}

#[derive(Serialize)]
struct SimSummary {
    rows: usize,
    feasible_samples: usize,
    max_position_excess: f64,
    max_rate_excess: f64,
    max_feasible_residual: f64,
    files: Vec<String>,
}

fn cmd_simulate(a: SimulateArgs) -> ExitCode {
    let model = match &a.model {
        None => SlvModel::appendix_b(),
        Some(p) => match SlvModel::load(p) {
            Ok(m) => m,
            Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", p.display())),
        },
    };
    let mut cfg = SimConfig {
        period: a.period,
        duration: a.duration,
        substeps: a.substeps,
        wiring: match a.wiring {
            WiringArg::Equilibrium => Wiring::Equilibrium,
            WiringArg::Feedforward => Wiring::Feedforward,
        },
        ..SimConfig::default()
    };
    if !a.set_points.is_empty() {
        cfg.schedule = a.set_points.clone();
    }
    if let Err(e) = cfg.validate() {
        return fail(EXIT_INPUT, e);
    }
    let files = TraceFiles::with_prefix(&a.out);
    let (trace, error) = match slv::run(&model, &model.limits, &cfg) {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    if let Err(e) = trace.write_files(&files, &model, &model.limits) {
        return fail(EXIT_INPUT, e);
    }
    if let Some(e) = error {
        let code = match e {
            SimError::Config(_) | SimError::Document(_) => EXIT_INPUT,
            _ => EXIT_SOLVER,
        };
        return fail(code, format!("{e} (partial trace with {} rows written)", trace.records.len()));
    }

    let mut pos = 0.0f64;
    let mut rate_ex = 0.0f64;
    let rates = trace.rates();
    for (rec, rate) in trace.records.iter().zip(&rates) {
        for i in 0..rec.u.len() {
            pos = pos
                .max(model.limits.pos_min()[i] - rec.u[i])
                .max(rec.u[i] - model.limits.pos_max()[i]);
            rate_ex = rate_ex
                .max(model.limits.rate_min()[i] - rate[i])
                .max(rate[i] - model.limits.rate_max()[i]);
        }
    }
    let feasible: Vec<_> = trace.records.iter().filter(|r| r.feasible).collect();
    let worst = feasible.iter().map(|r| (&r.v_desire - &r.v).norm()).fold(0.0, f64::max);
    let summary = SimSummary {
        rows: trace.records.len(),
        feasible_samples: feasible.len(),
        max_position_excess: pos,
        max_rate_excess: rate_ex,
        max_feasible_residual: worst,
        files: files.all().iter().map(|p| p.display().to_string()).collect(),
    };
    if a.json {
        print_json(&summary);
    } else {
        println!("samples: {} (T = {} s)", summary.rows, sig(cfg.period));
        println!("feasible samples: {}", summary.feasible_samples);
        println!("max position-limit excess: {}", sig(summary.max_position_excess));
        println!("max rate-limit excess: {}", sig(summary.max_rate_excess));
        println!("max residual on feasible samples: {}", sig(summary.max_feasible_residual));
        for f in &summary.files {
            println!("wrote {f}");
        }
    }
    if pos > 1e-9 || rate_ex > 1e-9 {
        return fail(EXIT_MISMATCH, "constraint audit failed");
    }
    ExitCode::SUCCESS
}

fn cmd_fuzz(a: FuzzArgs) -> ExitCode {
    if let Some(m) = a.m {
        if !(4..=8).contains(&m) {
            return fail(EXIT_INPUT, format!("--m must be in 4..=8, got {m}"));
        }
    }
    if let Some(n) = a.n {
        let m_max = a.m.unwrap_or(8);
        if n < 3 || n >= m_max {
            return fail(EXIT_INPUT, format!("--n must be in 3..m, got {n}"));
        }
        if a.m.is_none() {
            return fail(EXIT_INPUT, "--n needs --m");
        }
    }
    let cfg = FuzzConfig {
        count: a.count,
        seed: a.seed,
        m: a.m,
        n: a.n,
        feasible_only: a.feasible_only,
        oracle: !a.no_oracle,
        solver: SolverConfig::default(),
    };
    let (report, _) = fuzz::run(&cfg);
    let failing: Vec<_> = report
        .violations
        .iter()
        .filter(|v| a.strict || v.kind.is_hard())
        .collect();
    if a.json {
        print_json(&report);
    } else {
        println!("instances: {} (seed {})", report.instances, cfg.seed);
        for (k, c) in &report.by_kind {
            println!("  {k:?}: {c}");
        }
        println!(
            "max feasible iterations - (m - n): {}; max iterations - m: {}",
            report.max_feasible_iterations_over_bound, report.max_iterations_over_bound
        );
        println!("max ||w||_inf: {}", sig(report.max_norm_inf_w));
        if cfg.oracle {
            println!(
                "oracle: {} feasible, {} infeasible",
                report.oracle_feasible, report.oracle_infeasible
            );
            println!(
                "  ||u|| - ||u*|| on feasible: max {}, mean {}",
                sig(report.norm_gap.max),
                sig(report.norm_gap.mean)
            );
            println!(
                "  residual gap on infeasible: max {}, mean {}",
                sig(report.residual_gap.max),
                sig(report.residual_gap.mean)
            );
        }
        let mut kinds: Vec<_> = report.violations.iter().map(|v| v.kind).collect();
        kinds.sort();
        kinds.dedup();
        for k in kinds {
            let hard = if k.is_hard() { "violation" } else { "oracle finding" };
            println!("{hard} {k:?}: {}", report.count(k));
        }
        for v in failing.iter().take(20) {
            println!("  seed {} (instance {}): {:?} {}", v.seed, v.index, v.kind, v.detail);
        }
    }
    if failing.is_empty() {
        ExitCode::SUCCESS
    } else {
        let mut seeds: Vec<u64> = failing.iter().map(|v| v.seed).collect();
        seeds.dedup();
        eprintln!("offending seeds: {seeds:?}");
        ExitCode::from(EXIT_MISMATCH)
    }
}
