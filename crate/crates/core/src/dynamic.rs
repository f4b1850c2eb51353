//! Time-stepped allocation under position and rate limits.

use serde::Serialize;
use thiserror::Error;

use crate::allocator::{AllocError, AllocationResult, Allocator};
use crate::geometry::Bounds;
use crate::linalg::Vector;

#[derive(Debug, Error)]
pub enum DynamicError {
    #[error("invalid actuator limits: {0}")]
    Limits(String),
    #[error("invalid allocator state: {0}")]
    State(String),
    #[error("element {index}: effective interval [{lower}, {upper}] is empty; previous command left the position limits")]
    Collapsed { index: usize, lower: f64, upper: f64 },
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// Position limits and signed rate limits (units per second).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActuatorLimits {
    pos_min: Vector,
    pos_max: Vector,
    rate_min: Vector,
    rate_max: Vector,
}

impl ActuatorLimits {
    pub fn new(pos_min: Vector, pos_max: Vector, rate_min: Vector, rate_max: Vector) -> Result<Self, DynamicError> {
        let m = pos_min.len();
        if m == 0 || pos_max.len() != m || rate_min.len() != m || rate_max.len() != m {
            return Err(DynamicError::Limits(format!(
                "length mismatch: pos_min {}, pos_max {}, rate_min {}, rate_max {}",
                m,
                pos_max.len(),
                rate_min.len(),
                rate_max.len()
            )));
        }
        for i in 0..m {
            if !(pos_min[i] < pos_max[i]) || !pos_min[i].is_finite() || !pos_max[i].is_finite() {
                return Err(DynamicError::Limits(format!(
                    "element {i}: pos_min {} must be below pos_max {}",
                    pos_min[i], pos_max[i]
                )));
            }
            if !(rate_min[i] < 0.0 && 0.0 < rate_max[i]) || !rate_min[i].is_finite() || !rate_max[i].is_finite() {
                return Err(DynamicError::Limits(format!(
                    "element {i}: need rate_min < 0 < rate_max, got {} and {}",
                    rate_min[i], rate_max[i]
                )));
            }
        }
        Ok(Self {
            pos_min,
            pos_max,
            rate_min,
            rate_max,
        })
    }

    pub fn len(&self) -> usize {
        self.pos_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_min.is_empty()
    }

    pub fn pos_min(&self) -> &Vector {
        &self.pos_min
    }

    pub fn pos_max(&self) -> &Vector {
        &self.pos_max
    }

    pub fn rate_min(&self) -> &Vector {
        &self.rate_min
    }

    pub fn rate_max(&self) -> &Vector {
        &self.rate_max
    }

    /// Copy with every limit multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, DynamicError> {
        Self::new(
            &self.pos_min * factor,
            &self.pos_max * factor,
            &self.rate_min * factor,
            &self.rate_max * factor,
        )
    }
}

/// Previous command and sampling period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocatorState {
    u_prev: Vector,
    period: f64,
}

impl AllocatorState {
    pub fn new(u_prev: Vector, period: f64) -> Result<Self, DynamicError> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(DynamicError::State(format!("sampling period must be positive, got {period}")));
        }
        if u_prev.iter().any(|x| !x.is_finite()) {
            return Err(DynamicError::State("u_prev has non-finite entries".into()));
        }
        Ok(Self { u_prev, period })
    }

    /// Actuators at rest at zero.
    pub fn at_rest(m: usize, period: f64) -> Result<Self, DynamicError> {
        Self::new(Vector::zeros(m), period)
    }

    pub fn u_prev(&self) -> &Vector {
        &self.u_prev
    }

    pub fn period(&self) -> f64 {
        self.period
    }
}

/// Intersection of the position box with the window reachable from
/// `u_prev` in one period.
pub fn effective_bounds(limits: &ActuatorLimits, state: &AllocatorState) -> Result<Bounds, DynamicError> {
    let m = limits.len();
    if state.u_prev.len() != m {
        return Err(DynamicError::State(format!(
            "u_prev has {} elements, limits have {m}",
            state.u_prev.len()
        )));
    }
    let t = state.period;
    let lower = Vector::from_fn(m, |i, _| limits.pos_min[i].max(state.u_prev[i] + limits.rate_min[i] * t));
    let upper = Vector::from_fn(m, |i, _| limits.pos_max[i].min(state.u_prev[i] + limits.rate_max[i] * t));
    for i in 0..m {
        if !(lower[i] < upper[i]) {
            return Err(DynamicError::Collapsed {
                index: i,
                lower: lower[i],
                upper: upper[i],
            });
        }
    }
    Ok(Bounds::new(lower, upper).expect("checked above"))
}

/// One allocation against the effective bounds. The state is updated only
/// on success.
pub fn step(
    allocator: &Allocator,
    v_desire: &Vector,
    limits: &ActuatorLimits,
    state: &mut AllocatorState,
) -> Result<(AllocationResult, Bounds), DynamicError> {
    let bounds = effective_bounds(limits, state)?;
    let result = allocator.solve(&bounds, v_desire)?;
    state.u_prev = result.u.clone();
    Ok((result, bounds))
}
