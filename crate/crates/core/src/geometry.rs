//! Saturation geometry: bandwidth center, border selection, weighted
//! distance and the saturated/free split.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::Vector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("bounds length mismatch: lower has {lower}, upper has {upper}")]
    Length { lower: usize, upper: usize },
    #[error("empty bounds")]
    Empty,
    #[error("element {index}: lower {lower} must be strictly below upper {upper}")]
    Collapsed { index: usize, lower: f64, upper: f64 },
}

/// Per-element position limits, `lower < upper` strictly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bounds {
    lower: Vector,
    upper: Vector,
}

impl Bounds {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, BoundsError> {
        if lower.len() != upper.len() {
            return Err(BoundsError::Length {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(BoundsError::Empty);
        }
        for i in 0..lower.len() {
            // also rejects NaN
            if !(lower[i] < upper[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(BoundsError::Collapsed {
                    index: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self, BoundsError> {
        Self::new(Vector::from_column_slice(lower), Vector::from_column_slice(upper))
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn half_width(&self) -> Vector {
        (&self.upper - &self.lower) * 0.5
    }

    /// Element-wise clamp into the box.
    pub fn clip(&self, u: &Vector) -> Vector {
        Vector::from_fn(u.len(), |i, _| u[i].clamp(self.lower[i], self.upper[i]))
    }
}

/// Bandwidth center: the midpoint `(u_max + u_min) / 2` of each interval.
pub fn center(bounds: &Bounds) -> Vector {
    (bounds.upper() + bounds.lower()) * 0.5
}

/// Selects `u_max` where `u >= center` and `u_min` otherwise.
pub fn border(u: &Vector, bounds: &Bounds) -> Vector {
    let c = center(bounds);
    Vector::from_fn(u.len(), |i, _| {
        if u[i] >= c[i] {
            bounds.upper()[i]
        } else {
            bounds.lower()[i]
        }
    })
}

/// Normalized distance of every element from its bandwidth center toward
/// the border on its own side. `w_l <= 1` exactly when `u_l` is in bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedDistance {
    pub w: Vector,
    pub border: Vector,
    pub center: Vector,
}

impl WeightedDistance {
    pub fn norm_inf(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    /// Signed offset `border - center` of element `l`.
    pub fn offset(&self, l: usize) -> f64 {
        self.border[l] - self.center[l]
    }
}

pub fn weighted_distance(u: &Vector, bounds: &Bounds) -> WeightedDistance {
    let c = center(bounds);
    let b = border(u, bounds);
    let w = Vector::from_fn(u.len(), |i, _| (u[i] - c[i]) / (b[i] - c[i]));
    WeightedDistance {
        w,
        border: b,
        center: c,
    }
}

/// Saturated set `S`, its complement `F`, the pivot element and the
/// correction direction over `S`.
///
/// `delta_bar[i] = (border_i - center_i) / |border_t - center_t|` for the
/// `i`-th member of `S` and pivot `t`, so a correction `delta_bar * delta`
/// lowers every saturated weighted distance by the same `delta / |d_t|`.
/// On the pivot itself the entry is `+1` or `-1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationState {
    saturated: Vec<usize>,
    free: Vec<usize>,
    delta_bar: Vector,
    pivot: usize,
}

impl SaturationState {
    /// Builds the state for an explicit member list. `members` must be
    /// nonempty and contain `pivot`; borders are read from `wd`.
    pub fn from_members(mut members: Vec<usize>, pivot: usize, wd: &WeightedDistance) -> Self {
        let m = wd.w.len();
        members.sort_unstable();
        members.dedup();
        assert!(members.binary_search(&pivot).is_ok(), "pivot must be saturated");
        let free = (0..m).filter(|l| members.binary_search(l).is_err()).collect();
        let scale = wd.offset(pivot).abs();
        let delta_bar = Vector::from_iterator(members.len(), members.iter().map(|&i| wd.offset(i) / scale));
        Self {
            saturated: members,
            free,
            delta_bar,
            pivot,
        }
    }

    pub fn saturated(&self) -> &[usize] {
        &self.saturated
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn delta_bar(&self) -> &Vector {
        &self.delta_bar
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn k(&self) -> usize {
        self.saturated.len()
    }

    pub fn contains(&self, l: usize) -> bool {
        self.saturated.binary_search(&l).is_ok()
    }

    /// Position of the pivot inside `saturated()`.
    pub fn pivot_slot(&self) -> usize {
        self.saturated.binary_search(&self.pivot).expect("pivot is saturated")
    }

    /// Adds members while keeping the current pivot.
    pub fn extended(&self, extra: impl IntoIterator<Item = usize>, wd: &WeightedDistance) -> Self {
        let mut members = self.saturated.clone();
        members.extend(extra);
        Self::from_members(members, self.pivot, wd)
    }
}

/// Elements attaining `||w||_inf` (relative tolerance `tie_tol`); the pivot
/// is the smallest such index.
pub fn saturated_set(wd: &WeightedDistance, tie_tol: f64) -> SaturationState {
    let top = wd.norm_inf();
    let members: Vec<usize> = (0..wd.w.len())
        .filter(|&l| wd.w[l] >= top * (1.0 - tie_tol))
        .collect();
    let pivot = members[0];
    SaturationState::from_members(members, pivot, wd)
}

/// First `delta > 0` at which a free element meets the pivot level.
///
/// The pivot's weighted distance is `w_t - pivot_rate * delta` and the free
/// element's signed distance (relative to its current border) is
/// `w_j + free_rate * delta`. The equality is solved on the current side;
/// if that root is not positive or leaves the pivot at or below its center,
/// it is retried with the free element's border mirrored. `None` means no
/// valid crossing exists.
pub(crate) fn crossing(w_t: f64, pivot_rate: f64, w_j: f64, free_rate: f64, tie_tol: f64) -> Option<f64> {
    if (w_t - w_j).abs() <= tie_tol * w_t.abs().max(1.0) {
        return Some(0.0);
    }
    for side in [1.0, -1.0] {
        let den = pivot_rate + side * free_rate;
        if den == 0.0 {
            continue;
        }
        let delta = (w_t - side * w_j) / den;
        if delta > 0.0 && delta.is_finite() && w_t - pivot_rate * delta > 0.0 {
            return Some(delta);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn paper_bounds() -> Bounds {
        Bounds::from_slices(&[-1.0, 0.2, -1.0, -0.4, -0.2], &[1.2, 1.0, 0.0, 0.6, 0.1]).unwrap()
    }

    fn close(a: &Vector, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn bounds_validation() {
        assert!(matches!(
            Bounds::from_slices(&[0.0, 1.0], &[1.0, 1.0]),
            Err(BoundsError::Collapsed { index: 1, .. })
        ));
        assert!(matches!(Bounds::from_slices(&[0.0], &[1.0, 2.0]), Err(BoundsError::Length { .. })));
        assert!(Bounds::from_slices(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn center_examples() {
        let sym = Bounds::from_slices(&[-2.0, -0.5], &[2.0, 0.5]).unwrap();
        assert_eq!(center(&sym), v(&[0.0, 0.0]));
        assert!(close(&center(&paper_bounds()), &[0.1, 0.6, -0.5, 0.1, -0.05], 1e-15));
        assert_eq!(center(&Bounds::from_slices(&[0.0], &[2.0]).unwrap()), v(&[1.0]));
    }

    #[test]
    fn border_examples() {
        let b = paper_bounds();
        let at_center = center(&b);
        assert_eq!(border(&at_center, &b), b.upper().clone());
        let u = v(&[-1.0, 1.0, 1.0, 0.2, 0.2]);
        assert!(close(&border(&u, &b), &[-1.0, 1.0, 0.0, 0.6, 0.1], 0.0));
        let below = &at_center - v(&[0.1; 5]);
        assert_eq!(border(&below, &b), b.lower().clone());
    }

    #[test]
    fn weighted_distance_examples() {
        let b = paper_bounds();
        let wd = weighted_distance(&v(&[-1.0, 1.0, 1.0, 0.2, 0.2]), &b);
        assert!(close(&wd.w, &[1.0, 1.0, 3.0, 0.2, 1.6667], 1e-3));
        assert_eq!(weighted_distance(&center(&b), &b).w, Vector::zeros(5));
        let u2 = v(&[-0.92, 1.3733, 0.4667, 0.24, 0.24]);
        let w2 = weighted_distance(&u2, &b).w;
        assert!(close(&w2, &[0.927, 1.933, 1.933, 0.28, 1.933], 1e-3));
    }

    #[test]
    fn saturated_set_examples() {
        let b = paper_bounds();
        let wd = weighted_distance(&v(&[-1.0, 1.0, 1.0, 0.2, 0.2]), &b);
        let s = saturated_set(&wd, 1e-9);
        assert_eq!(s.saturated(), &[2]);
        assert_eq!(s.free(), &[0, 1, 3, 4]);
        assert_eq!(s.delta_bar().as_slice(), &[1.0]);

        let wd1 = weighted_distance(&v(&[-1.0, 1.0 + 4.0 / 9.0, 5.0 / 9.0, 0.2, 0.2]), &b);
        assert_eq!(saturated_set(&wd1, 1e-9).saturated(), &[1, 2]);

        let uniform = Bounds::from_slices(&[-1.0; 4], &[1.0; 4]).unwrap();
        let all = saturated_set(&weighted_distance(&v(&[2.0, -2.0, 2.0, 2.0]), &uniform), 1e-9);
        assert_eq!(all.saturated(), &[0, 1, 2, 3]);
        assert!(all.free().is_empty());
    }

    #[test]
    fn delta_bar_is_pivot_scaled() {
        let b = paper_bounds();
        let wd = weighted_distance(&v(&[-1.0, 1.444, 0.556, 0.2, 0.2]), &b);
        let s = SaturationState::from_members(vec![1, 2], 2, &wd);
        assert!(close(s.delta_bar(), &[0.8, 1.0], 1e-15));
        assert_eq!(s.pivot_slot(), 1);
    }

    #[test]
    fn crossing_flips_border_once() {
        // free element receding from its border: the root on its own side is negative
        let d = crossing(2.0, 1.0, 0.5, -3.0, 1e-12).unwrap();
        assert!((2.0 - d - (-(0.5 - 3.0 * d))).abs() < 1e-12);
        assert_eq!(crossing(1.5, 1.0, 1.5, 0.0, 1e-9), Some(0.0));
        assert_eq!(crossing(2.0, 1.0, 0.5, 1.0, 1e-12), Some(0.75));
    }
}
