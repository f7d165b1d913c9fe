use serde::{Deserialize, Serialize};

/// One inequality recorded for a round. `asserted` rounds abort when the
/// inequality fails; the rest are informational.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub asserted: bool,
}

/// `a ≤ c · log₂ n`, decided without rounding when `log₂ n` is an integer.
/// Otherwise `log₂ n` is irrational, so equality cannot occur and the float
/// comparison picks the right side.
pub fn le_mul_log2(a: u128, c: u128, n: usize) -> bool {
    if n.is_power_of_two() {
        a <= c * n.trailing_zeros() as u128
    } else {
        (a as f64) <= (c as f64) * (n as f64).log2()
    }
}

/// `edges ≤ 3 · k · |L| · log₂ n`.
pub fn edge_bound(edges: usize, k: usize, l: usize, n: usize, asserted: bool) -> BoundCheck {
    let c = 3 * k as u128 * l as u128;
    BoundCheck {
        name: "edges <= 3k|L|log n".into(),
        lhs: edges as f64,
        rhs: c as f64 * crate::log2(n),
        holds: le_mul_log2(edges as u128, c, n),
        asserted,
    }
}

/// `|I| ≥ |L| / (7 · k · log₂ n)`, i.e. `|L| ≤ 7k|I| · log₂ n`.
pub fn isize_bound(i: usize, l: usize, k: usize, n: usize, asserted: bool) -> BoundCheck {
    let denom = 7.0 * k as f64 * crate::log2(n);
    BoundCheck {
        name: "|I| >= |L|/(7k log n)".into(),
        lhs: i as f64,
        rhs: if denom > 0.0 { l as f64 / denom } else { f64::INFINITY },
        holds: le_mul_log2(l as u128, 7 * k as u128 * i as u128, n),
        asserted,
    }
}

/// `|D| ≤ 2 · |S_α| · log₂ n`.
pub fn d_bound(d: usize, s_alpha: usize, n: usize, asserted: bool) -> BoundCheck {
    let c = 2 * s_alpha as u128;
    BoundCheck {
        name: "|D| <= 2|S_alpha|log n".into(),
        lhs: d as f64,
        rhs: c as f64 * crate::log2(n),
        holds: le_mul_log2(d as u128, c, n),
        asserted,
    }
}

/// `|H₁| > |H| / 2`.
pub fn h1_bound(h1: usize, h: usize, asserted: bool) -> BoundCheck {
    BoundCheck {
        name: "|H1| > |H|/2".into(),
        lhs: h1 as f64,
        rhs: h as f64 / 2.0,
        holds: 2 * h1 > h,
        asserted,
    }
}

/// `|S_β \ S_α| > |H| / (204.8 k)`, i.e. `1024 k x > 5 |H|`.
pub fn beta_bound(x: usize, h: usize, k: usize, asserted: bool) -> BoundCheck {
    BoundCheck {
        name: "|S_beta \\ S_alpha| > |H|/(204.8k)".into(),
        lhs: x as f64,
        rhs: h as f64 / (204.8 * k as f64),
        holds: 1024 * k as u128 * x as u128 > 5 * h as u128,
        asserted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_of_two_boundary_is_exact() {
        // 3 · 1 · 8 · log₂ 8 = 72
        assert!(edge_bound(72, 1, 8, 8, true).holds);
        assert!(!edge_bound(73, 1, 8, 8, true).holds);
    }

    #[test]
    fn irrational_logs() {
        // 2 · 2 · log₂ 12 ≈ 14.34
        assert!(d_bound(14, 2, 12, true).holds);
        assert!(!d_bound(15, 2, 12, true).holds);
    }

    #[test]
    fn isize_examples() {
        // 7 · 1 · 1 · log₂ 12 ≈ 25.1 ≥ 12
        assert!(isize_bound(1, 12, 1, 12, true).holds);
        assert!(!isize_bound(0, 1, 1, 8, true).holds);
        assert!(isize_bound(0, 0, 1, 8, true).holds);
    }

    #[test]
    fn beta_and_h1() {
        assert!(beta_bound(1, 1000, 5, true).holds);
        assert!(!beta_bound(1, 1024, 1, true).holds);
        assert!(h1_bound(3, 5, true).holds && !h1_bound(2, 4, true).holds);
    }
}
