//! Divided differences of `f(s) = exp(-i s)` over small node multisets.
//!
//! The simplex transform kernel is exactly such a divided difference, and so
//! is its derivative with respect to one node (the same difference with that
//! node repeated). Nodes may coincide. Clusters whose spread is at most
//! [`CLUSTER_SPREAD`] are evaluated by a Taylor expansion around their mean;
//! wider intervals use the Newton recurrence, which only divides by spreads
//! larger than the cluster width and therefore stays well conditioned.

use num_complex::Complex64;

/// Largest node multiset supported (degree-3 simplex plus one repeated node,
/// with room to spare).
pub const MAX_NODES: usize = 6;

/// Node spread at or below which the Taylor expansion is used.
pub const CLUSTER_SPREAD: f64 = 1.0;

/// Taylor terms beyond the leading one; `1 / 22!` is far below `f64` epsilon.
const TAYLOR_TERMS: usize = 22;

/// `(-i)^n` as an exact unit.
#[cfg(test)]
pub(crate) fn neg_i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// `exp(-i s)`.
#[inline]
pub(crate) fn cis_neg(s: f64) -> Complex64 {
    let (sin, cos) = s.sin_cos();
    Complex64::new(cos, -sin)
}

/// The divided difference `f[s_0, ..., s_n]` of `exp(-i s)`.
///
/// # Panics
///
/// If `nodes` is empty or longer than [`MAX_NODES`].
pub fn exp_divided_difference(nodes: &[f64]) -> Complex64 {
    let n = nodes.len();
    assert!((1..=MAX_NODES).contains(&n), "unsupported node count {n}");
    let mut sorted = [0.0; MAX_NODES];
    sorted[..n].copy_from_slice(nodes);
    sorted[..n].sort_unstable_by(f64::total_cmp);
    let mut memo = [[None; MAX_NODES]; MAX_NODES];
    interval(&sorted[..n], 0, n - 1, &mut memo)
}

fn interval(s: &[f64], a: usize, b: usize, memo: &mut [[Option<Complex64>; MAX_NODES]; MAX_NODES]) -> Complex64 {
    if let Some(v) = memo[a][b] {
        return v;
    }
    let spread = s[b] - s[a];
    let v = if a == b {
        cis_neg(s[a])
    } else if spread <= CLUSTER_SPREAD {
        taylor(&s[a..=b])
    } else {
        (interval(s, a + 1, b, memo) - interval(s, a, b - 1, memo)) / spread
    };
    memo[a][b] = Some(v);
    v
}

/// Expansion about the cluster mean `mu`:
/// `f[s] = exp(-i mu) * sum_r (-i)^(q+r) / (q+r)! * h_r(s - mu)`
/// where `h_r` is the complete homogeneous symmetric polynomial of degree `r`
/// and `q + 1` is the node count.
fn taylor(s: &[f64]) -> Complex64 {
    let q = s.len() - 1;
    let mu = s.iter().sum::<f64>() / s.len() as f64;

    let mut h = [0.0; TAYLOR_TERMS + 1];
    h[0] = 1.0;
    for &x in s {
        let y = x - mu;
        if y != 0.0 {
            for r in 1..=TAYLOR_TERMS {
                h[r] += y * h[r - 1];
            }
        }
    }

    let mut inv_fact = 1.0;
    for n in 2..=q {
        inv_fact /= n as f64;
    }
    let (mut re, mut im) = (0.0, 0.0);
    for (r, &hr) in h.iter().enumerate() {
        if r > 0 {
            inv_fact /= (q + r) as f64;
        }
        let term = hr * inv_fact;
        match (q + r) % 4 {
            0 => re += term,
            1 => im -= term,
            2 => re -= term,
            _ => im += term,
        }
    }
    cis_neg(mu) * Complex64::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook Lagrange form, valid only for distinct nodes.
    fn lagrange(nodes: &[f64]) -> Complex64 {
        let mut sum = Complex64::new(0.0, 0.0);
        for (t, &st) in nodes.iter().enumerate() {
            let denom: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != t)
                .map(|(_, &sl)| st - sl)
                .product();
            sum += cis_neg(st) / denom;
        }
        sum
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn single_node_is_the_function() {
        let v = exp_divided_difference(&[std::f64::consts::PI]);
        assert!(close(v, Complex64::new(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn matches_lagrange_for_separated_nodes() {
        for nodes in [
            vec![0.0, std::f64::consts::PI],
            vec![-3.0, 1.5, 7.25],
            vec![0.3, 2.9, -4.1, 10.0],
            vec![0.3, 0.9, 2.4, -1.0, 5.5],
        ] {
            let a = exp_divided_difference(&nodes);
            let b = lagrange(&nodes);
            assert!(close(a, b, 1e-13), "{nodes:?}: {a} vs {b}");
        }
    }

    #[test]
    fn two_nodes_zero_pi() {
        let v = exp_divided_difference(&[0.0, std::f64::consts::PI]);
        assert!(close(v, Complex64::new(-2.0 / std::f64::consts::PI, 0.0), 1e-15));
    }

    #[test]
    fn fully_confluent_is_scaled_derivative() {
        // f^(n)(s) / n! with f^(n) = (-i)^n exp(-i s)
        for n in 1..5 {
            let s = 0.7;
            let nodes = vec![s; n + 1];
            let expect = neg_i_pow(n) * cis_neg(s) / crate::geometry::factorial(n);
            assert!(close(exp_divided_difference(&nodes), expect, 1e-15));
        }
        let v = exp_divided_difference(&[0.0, 0.0, 0.0]);
        assert_eq!(v, Complex64::new(-0.5, 0.0));
    }

    #[test]
    fn symmetric_in_node_order() {
        let a = exp_divided_difference(&[0.1, 4.0, 0.1000001, -2.0]);
        let b = exp_divided_difference(&[-2.0, 0.1000001, 4.0, 0.1]);
        assert_eq!(a, b);
    }

    #[test]
    fn two_node_difference_against_closed_form() {
        // f[a, b] = (f(b) - f(a)) / (b - a), evaluated in a stable form
        let a = 1.0;
        for gap in [1.5, 0.9, 1e-3, 1e-8] {
            let b = a + gap;
            let exact = cis_neg(a + gap / 2.0) * Complex64::new(0.0, -1.0) * ((gap / 2.0).sin() / (gap / 2.0));
            assert!(close(exp_divided_difference(&[a, b]), exact, 1e-14), "gap {gap}");
        }
    }
}
