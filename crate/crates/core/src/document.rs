//! TOML input documents: allocation problems and named matrix blocks.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::dynamic::{ActuatorLimits, AllocatorState};
use crate::geometry::Bounds;
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> DocumentError {
    DocumentError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

/// Row-major matrix with explicit dimensions.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixBlock {
    pub fn to_matrix(&self, field: &str) -> Result<Matrix, DocumentError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(invalid(field, format!("empty {}x{} matrix", self.rows, self.cols)));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(invalid(
                format!("{field}.data"),
                format!("expected {} entries for {}x{}, got {}", self.rows * self.cols, self.rows, self.cols, self.data.len()),
            ));
        }
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("{field}.data[{i}]"), "non-finite entry"));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    /// Converts and checks the shape.
    pub fn to_matrix_sized(&self, field: &str, rows: usize, cols: usize) -> Result<Matrix, DocumentError> {
        if (self.rows, self.cols) != (rows, cols) {
            return Err(invalid(
                field,
                format!("expected {rows}x{cols}, got {}x{}", self.rows, self.cols),
            ));
        }
        self.to_matrix(field)
    }
}

pub(crate) fn vector_field(field: &str, data: &[f64], len: usize) -> Result<Vector, DocumentError> {
    if data.len() != len {
        return Err(invalid(field, format!("expected {len} entries, got {}", data.len())));
    }
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(invalid(format!("{field}[{i}]"), "non-finite entry"));
    }
    Ok(Vector::from_column_slice(data))
}

pub(crate) fn read_file(path: &Path) -> Result<String, DocumentError> {
    std::fs::read_to_string(path).map_err(|source| DocumentError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    u_min: Vec<f64>,
    u_max: Vec<f64>,
    v_desire: Vec<f64>,
    rate_min: Option<Vec<f64>>,
    rate_max: Option<Vec<f64>>,
    #[serde(rename = "T")]
    period: Option<f64>,
    u_prev: Option<Vec<f64>>,
    #[serde(rename = "B")]
    b: MatrixBlock,
}

/// Rate limits, sampling period and previous command of a problem document.
#[derive(Debug, Clone)]
pub struct RateSpec {
    pub limits: ActuatorLimits,
    pub state: AllocatorState,
}

/// Validated allocation problem read from a document.
#[derive(Debug, Clone)]
pub struct ProblemDocument {
    pub b: Matrix,
    pub bounds: Bounds,
    pub v_desire: Vector,
    pub rate: Option<RateSpec>,
}

impl ProblemDocument {
    pub fn from_toml(text: &str) -> Result<Self, DocumentError> {
        let raw: RawProblem = toml::from_str(text)?;
        let b = raw.b.to_matrix("B")?;
        let (n, m) = b.shape();
        if m < n {
            return Err(invalid("B", format!("need at least as many columns as rows, got {n}x{m}")));
        }
        let u_min = vector_field("u_min", &raw.u_min, m)?;
        let u_max = vector_field("u_max", &raw.u_max, m)?;
        let v_desire = vector_field("v_desire", &raw.v_desire, n)?;
        let bounds = Bounds::new(u_min, u_max).map_err(|e| invalid("u_min/u_max", e.to_string()))?;

        let rate = match (raw.rate_min, raw.rate_max, raw.period) {
            (None, None, None) => {
                if raw.u_prev.is_some() {
                    return Err(invalid("u_prev", "only meaningful together with rate limits"));
                }
                None
            }
            (Some(lo), Some(hi), Some(t)) => {
                let lo = vector_field("rate_min", &lo, m)?;
                let hi = vector_field("rate_max", &hi, m)?;
                let limits = ActuatorLimits::new(bounds.lower().clone(), bounds.upper().clone(), lo, hi)
                    .map_err(|e| invalid("rate_min/rate_max", e.to_string()))?;
                let u_prev = match raw.u_prev {
                    Some(p) => vector_field("u_prev", &p, m)?,
                    None => Vector::zeros(m),
                };
                let state = AllocatorState::new(u_prev, t).map_err(|e| invalid("T", e.to_string()))?;
                Some(RateSpec { limits, state })
            }
            _ => return Err(invalid("rate_min/rate_max/T", "rate limits need rate_min, rate_max and T together")),
        };
        Ok(Self {
            b,
            bounds,
            v_desire,
            rate,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DocumentError> {
        Self::from_toml(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
u_min = [-1.0, 0.2, -1.0, -0.4, -0.2]
u_max = [1.2, 1.0, 0.0, 0.6, 0.1]
v_desire = [1.4, 1.0, -1.0]

[B]
rows = 3
cols = 5
data = [1, 1, 1, 1, 1,
        1, 1, 1, 0, 0,
        1, 0, 0, 0, 0]
"#;

    #[test]
    fn loads_example() {
        let d = ProblemDocument::from_toml(EXAMPLE).unwrap();
        assert_eq!(d.b.shape(), (3, 5));
        assert_eq!(d.b[(1, 2)], 1.0);
        assert_eq!(d.v_desire[2], -1.0);
        assert!(d.rate.is_none());
    }

    #[test]
    fn reports_field_paths() {
        let bad = EXAMPLE.replace("v_desire = [1.4, 1.0, -1.0]", "v_desire = [1.4, 1.0]");
        let e = ProblemDocument::from_toml(&bad).unwrap_err().to_string();
        assert!(e.starts_with("v_desire:"), "{e}");

        let bad = EXAMPLE.replace("cols = 5", "cols = 4");
        let e = ProblemDocument::from_toml(&bad).unwrap_err().to_string();
        assert!(e.starts_with("B.data:"), "{e}");

        let bad = EXAMPLE.replace("u_max = [1.2,", "u_max = [-2.0,");
        let e = ProblemDocument::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("u_min/u_max") && e.contains("element 0"), "{e}");

        let bad = EXAMPLE.replace("v_desire", "rate_min = [-1.0, -1.0, -1.0, -1.0, -1.0]\nv_desire");
        let e = ProblemDocument::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("together"), "{e}");
    }

    #[test]
    fn loads_rate_limits() {
        let text = EXAMPLE.replace(
            "v_desire",
            "rate_min = [-1.0, -1.0, -1.0, -1.0, -1.0]\nrate_max = [1.0, 1.0, 1.0, 1.0, 1.0]\nT = 0.1\nu_prev = [0.0, 0.5, -0.5, 0.0, 0.0]\nv_desire",
        );
        let d = ProblemDocument::from_toml(&text).unwrap();
        let r = d.rate.unwrap();
        assert_eq!(r.state.period(), 0.1);
        assert_eq!(r.state.u_prev()[1], 0.5);
    }
}
