//! Text formatting helpers: six significant digits, 1-based indices.

use pinv_alloc::{Matrix, Vector};

/// Six significant digits, trailing zeros trimmed.
pub fn sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=6).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| sig(x)).collect();
    format!("[{}]", items.join(", "))
}

pub fn dvec(v: &Vector) -> String {
    vec(v.as_slice())
}

pub fn set(idx: &[usize]) -> String {
    let items: Vec<String> = idx.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", items.join(", "))
}

pub fn rows(rows: &[Vec<f64>], indent: &str) -> String {
    rows.iter().map(|r| format!("{indent}{}", vec(r))).collect::<Vec<_>>().join("\n")
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig(4.0 / 9.0), "0.444444");
        assert_eq!(sig(1.0), "1");
        assert_eq!(sig(-13.0 / 30.0), "-0.433333");
        assert_eq!(sig(123456.7), "123457");
        assert_eq!(sig(1.4), "1.4");
        assert_eq!(sig(1e-9), "1.00000e-9");
        assert_eq!(sig(-1e-17 * 0.0), "0");
    }

    #[test]
    fn one_based_sets() {
        assert_eq!(set(&[1, 2]), "{2, 3}");
    }
}
