//! Closed-loop launch-vehicle attitude simulation with the dynamic
//! allocator in the loop.
//!
//! Plant `x' = A x + B_v v`, `v = B u`, outputs `y = C x` (pitch, yaw, roll
//! angles). The controller produces `v_desire`; the allocator turns it into
//! eight actuator deflections under position and rate limits.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{AllocError, Allocator, Feasibility, SolverConfig};
use crate::document::{read_file, DocumentError, MatrixBlock};
use crate::dynamic::{step, ActuatorLimits, AllocatorState, DynamicError};
use crate::linalg::{Matrix, Vector};

const DEG: f64 = std::f64::consts::PI / 180.0;

const APPENDIX_B: &str = include_str!("../data/slv_appendix_b.toml");

pub const STATES: usize = 6;
pub const AXES: usize = 3;
pub const ACTUATORS: usize = 8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("state diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("allocation failed at t = {t}: {source}")]
    Allocation {
        t: f64,
        #[source]
        source: DynamicError,
    },
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimits {
    pos_min_deg: Vec<f64>,
    pos_max_deg: Vec<f64>,
    rate_min_deg: Vec<f64>,
    rate_max_deg: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "A")]
    a: MatrixBlock,
    #[serde(rename = "B_v")]
    b_v: MatrixBlock,
    #[serde(rename = "B")]
    b: MatrixBlock,
    #[serde(rename = "C")]
    c: MatrixBlock,
    #[serde(rename = "K")]
    k: MatrixBlock,
    #[serde(rename = "N")]
    n: MatrixBlock,
    #[serde(rename = "F")]
    f: MatrixBlock,
    limits: RawLimits,
}

/// Model matrices plus actuator limits (radians, radians per second).
#[derive(Debug, Clone)]
pub struct SlvModel {
    pub a: Matrix,
    pub b_v: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub k: Matrix,
    pub n_ff: Matrix,
    pub f: Matrix,
    pub limits: ActuatorLimits,
}

impl SlvModel {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let raw: RawModel = toml::from_str(text).map_err(DocumentError::from)?;
        let deg = |field: &str, d: &[f64]| -> Result<Vector, DocumentError> {
            crate::document::vector_field(&format!("limits.{field}"), d, ACTUATORS).map(|v| v * DEG)
        };
        let limits = ActuatorLimits::new(
            deg("pos_min_deg", &raw.limits.pos_min_deg)?,
            deg("pos_max_deg", &raw.limits.pos_max_deg)?,
            deg("rate_min_deg", &raw.limits.rate_min_deg)?,
            deg("rate_max_deg", &raw.limits.rate_max_deg)?,
        )
        .map_err(|e| DocumentError::Invalid {
            field: "limits".into(),
            msg: e.to_string(),
        })?;
        Ok(Self {
            a: raw.a.to_matrix_sized("A", STATES, STATES)?,
            b_v: raw.b_v.to_matrix_sized("B_v", STATES, AXES)?,
            b: raw.b.to_matrix_sized("B", AXES, ACTUATORS)?,
            c: raw.c.to_matrix_sized("C", AXES, STATES)?,
            k: raw.k.to_matrix_sized("K", AXES, STATES)?,
            n_ff: raw.n.to_matrix_sized("N", AXES, AXES)?,
            f: raw.f.to_matrix_sized("F", STATES, AXES)?,
            limits,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml(&read_file(path)?)
    }

    /// The shipped vehicle data.
    pub fn appendix_b() -> Self {
        Self::from_toml(APPENDIX_B).expect("bundled model is valid")
    }

    /// Eigenvalues `(re, im)` of `A - B_v K`.
    pub fn closed_loop_spectrum(&self) -> Vec<(f64, f64)> {
        let acl = &self.a - &self.b_v * &self.k;
        acl.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
    }

    pub fn is_closed_loop_stable(&self) -> bool {
        self.closed_loop_spectrum().iter().all(|&(re, _)| re < 0.0)
    }
}

/// How the set point enters the control law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wiring {
    /// `v = -K x + (N - K F) r`: `-F r` is the state equilibrium for `r`
    /// and `N r` the input that holds it.
    Equilibrium,
    /// `v = N r - K x`.
    Feedforward,
}

pub fn controller(x: &Vector, r: &Vector, model: &SlvModel, wiring: Wiring) -> Vector {
    match wiring {
        Wiring::Equilibrium => -(&model.k * x) + (&model.n_ff - &model.k * &model.f) * r,
        Wiring::Feedforward => &model.n_ff * r - &model.k * x,
    }
}

fn derivative(model: &SlvModel, x: &Vector, forcing: &Vector) -> Vector {
    &model.a * x + forcing
}

/// Classic RK4 over `dt` split into `substeps` equal steps with `v` held.
pub fn plant_step(x: &Vector, v: &Vector, model: &SlvModel, dt: f64, substeps: usize) -> Result<Vector, SimError> {
    if !(dt > 0.0) || substeps == 0 {
        return Err(SimError::Config(format!("need dt > 0 and substeps >= 1, got {dt} and {substeps}")));
    }
    let forcing = &model.b_v * v;
    let h = dt / substeps as f64;
    let mut x = x.clone();
    for _ in 0..substeps {
        let k1 = derivative(model, &x, &forcing);
        let k2 = derivative(model, &(&x + &k1 * (h / 2.0)), &forcing);
        let k3 = derivative(model, &(&x + &k2 * (h / 2.0)), &forcing);
        let k4 = derivative(model, &(&x + &k3 * h), &forcing);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Divergence { t: f64::NAN });
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetPoint {
    pub time: f64,
    /// Target outputs in radians.
    pub r: [f64; AXES],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub period: f64,
    pub duration: f64,
    pub substeps: usize,
    pub schedule: Vec<SetPoint>,
    pub wiring: Wiring,
    pub solver: SolverConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            period: 0.01,
            duration: 10.0,
            substeps: 4,
            schedule: default_schedule(),
            wiring: Wiring::Equilibrium,
            solver: SolverConfig::default(),
        }
    }
}

/// Two set-point changes at 2 s and 6 s.
pub fn default_schedule() -> Vec<SetPoint> {
    vec![
        SetPoint {
            time: 2.0,
            r: [0.28 * DEG, 0.4 * DEG, 0.12 * DEG],
        },
        SetPoint {
            time: 6.0,
            r: [-0.014 * DEG, -0.018 * DEG, -0.018 * DEG],
        },
    ]
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(SimError::Config(format!("period must be positive, got {}", self.period)));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(SimError::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if self.substeps == 0 {
            return Err(SimError::Config("substeps must be at least 1".into()));
        }
        if self.schedule.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(SimError::Config("schedule times must be nondecreasing".into()));
        }
        if self.schedule.iter().any(|s| !s.time.is_finite() || s.r.iter().any(|x| !x.is_finite())) {
            return Err(SimError::Config("schedule has non-finite entries".into()));
        }
        Ok(())
    }

    /// Number of recorded samples, `duration / period + 1`.
    pub fn samples(&self) -> usize {
        (self.duration / self.period).round() as usize + 1
    }

    /// Set point in force at time `t` (zero before the first entry).
    pub fn set_point(&self, t: f64) -> Vector {
        let eps = 1e-9 * self.period;
        self.schedule
            .iter()
            .rev()
            .find(|s| s.time <= t + eps)
            .map_or_else(|| Vector::zeros(AXES), |s| Vector::from_column_slice(&s.r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRecord {
    pub t: f64,
    pub x: Vector,
    pub r: Vector,
    pub v_desire: Vector,
    /// Produced virtual control `B u`.
    pub v: Vector,
    pub u: Vector,
    pub u_min: Vector,
    pub u_max: Vector,
    pub feasible: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimTrace {
    pub period: f64,
    pub records: Vec<SimRecord>,
}

/// Error plus everything recorded before it.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct SimFailure {
    #[source]
    pub error: SimError,
    pub partial: SimTrace,
}

pub fn run(model: &SlvModel, limits: &ActuatorLimits, config: &SimConfig) -> Result<SimTrace, SimFailure> {
    let fail = |error, partial| SimFailure { error, partial };
    let mut trace = SimTrace {
        period: config.period,
        records: Vec::new(),
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, trace));
    }
    let allocator = match Allocator::new(model.b.clone(), config.solver) {
        Ok(a) => a,
        Err(e) => return Err(fail(e.into(), trace)),
    };
    let mut state = match AllocatorState::at_rest(ACTUATORS, config.period) {
        Ok(s) => s,
        Err(e) => return Err(fail(SimError::Allocation { t: 0.0, source: e }, trace)),
    };
    let samples = config.samples();
    let mut x = Vector::zeros(STATES);
    for s in 0..samples {
        let t = s as f64 * config.period;
        let r = config.set_point(t);
        let v_desire = controller(&x, &r, model, config.wiring);
        let (result, bounds) = match step(&allocator, &v_desire, limits, &mut state) {
            Ok(out) => out,
            Err(e) => return Err(fail(SimError::Allocation { t, source: e }, trace)),
        };
        let v = &model.b * &result.u;
        trace.records.push(SimRecord {
            t,
            x: x.clone(),
            r,
            v_desire,
            v: v.clone(),
            u: result.u,
            u_min: bounds.lower().clone(),
            u_max: bounds.upper().clone(),
            feasible: result.feasibility == Feasibility::Feasible,
            iterations: result.iterations,
        });
        if s + 1 < samples {
            x = match plant_step(&x, &v, model, config.period, config.substeps) {
                Ok(next) => next,
                Err(SimError::Divergence { .. }) => return Err(fail(SimError::Divergence { t }, trace)),
                Err(e) => return Err(fail(e, trace)),
            };
        }
    }
    Ok(trace)
}

fn indexed(name: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{name}{i}"))
}

/// Column names of the full trace file, in order.
pub fn trace_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(indexed("x", STATES));
    h.extend(indexed("vd", AXES));
    h.extend(indexed("v", AXES));
    h.extend(indexed("u", ACTUATORS));
    h.extend(indexed("umin", ACTUATORS));
    h.extend(indexed("umax", ACTUATORS));
    h.push("feasible".into());
    h.push("iters".into());
    h
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn push_all(row: &mut Vec<String>, v: &Vector) {
    row.extend(v.iter().map(|&x| num(x)));
}

/// Paths written by [`SimTrace::write_files`].
#[derive(Debug, Clone)]
pub struct TraceFiles {
    pub trace: PathBuf,
    pub states: PathBuf,
    pub inputs: PathBuf,
    pub rates: PathBuf,
}

impl TraceFiles {
    pub fn with_prefix(prefix: &str) -> Self {
        Self {
            trace: PathBuf::from(format!("{prefix}_trace.csv")),
            states: PathBuf::from(format!("{prefix}_states.csv")),
            inputs: PathBuf::from(format!("{prefix}_inputs.csv")),
            rates: PathBuf::from(format!("{prefix}_rates.csv")),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.trace, &self.states, &self.inputs, &self.rates]
    }
}

impl SimTrace {
    /// Actuator rates `(u_k - u_{k-1}) / T`; the first sample is measured
    /// from rest.
    pub fn rates(&self) -> Vec<Vector> {
        let mut prev = Vector::zeros(ACTUATORS);
        self.records
            .iter()
            .map(|rec| {
                let rate = (&rec.u - &prev) / self.period;
                prev = rec.u.clone();
                rate
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(trace_header())?;
        for rec in &self.records {
            let mut row = vec![num(rec.t)];
            push_all(&mut row, &rec.x);
            push_all(&mut row, &rec.v_desire);
            push_all(&mut row, &rec.v);
            push_all(&mut row, &rec.u);
            push_all(&mut row, &rec.u_min);
            push_all(&mut row, &rec.u_max);
            row.push(u8::from(rec.feasible).to_string());
            row.push(rec.iterations.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| SimError::Io {
            path: "<trace>".into(),
            source,
        })?;
        Ok(())
    }

    /// Outputs `y = C x` against set points.
    pub fn write_states<W: Write>(&self, c: &Matrix, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut h = vec!["t".to_string()];
        h.extend(indexed("y", AXES));
        h.extend(indexed("r", AXES));
        w.write_record(h)?;
        for rec in &self.records {
            let mut row = vec![num(rec.t)];
            push_all(&mut row, &(c * &rec.x));
            push_all(&mut row, &rec.r);
            w.write_record(&row)?;
        }
        Ok(())
    }

    /// Deflections against the effective bounds.
    pub fn write_inputs<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut h = vec!["t".to_string()];
        h.extend(indexed("u", ACTUATORS));
        h.extend(indexed("umin", ACTUATORS));
        h.extend(indexed("umax", ACTUATORS));
        w.write_record(h)?;
        for rec in &self.records {
            let mut row = vec![num(rec.t)];
            push_all(&mut row, &rec.u);
            push_all(&mut row, &rec.u_min);
            push_all(&mut row, &rec.u_max);
            w.write_record(&row)?;
        }
        Ok(())
    }

    /// Deflection rates against the rate limits.
    pub fn write_rates<W: Write>(&self, limits: &ActuatorLimits, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut h = vec!["t".to_string()];
        h.extend(indexed("rate", ACTUATORS));
        h.extend(indexed("ratemin", ACTUATORS));
        h.extend(indexed("ratemax", ACTUATORS));
        w.write_record(h)?;
        for (rec, rate) in self.records.iter().zip(self.rates()) {
            let mut row = vec![num(rec.t)];
            push_all(&mut row, &rate);
            push_all(&mut row, limits.rate_min());
            push_all(&mut row, limits.rate_max());
            w.write_record(&row)?;
        }
        Ok(())
    }

    pub fn write_files(&self, files: &TraceFiles, model: &SlvModel, limits: &ActuatorLimits) -> Result<(), SimError> {
        let open = |p: &Path| {
            std::fs::File::create(p).map_err(|source| SimError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        self.write_csv(open(&files.trace)?)?;
        self.write_states(&model.c, open(&files.states)?)?;
        self.write_inputs(open(&files.inputs)?)?;
        self.write_rates(limits, open(&files.rates)?)?;
        Ok(())
    }
}
