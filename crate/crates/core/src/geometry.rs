//! Simplex content and distortion factors.
//!
//! Content (length, area, volume) comes from the Cayley-Menger determinant so
//! the same code path serves every simplex degree embedded in any dimension.
//! The distortion factor is the content measured in units of the unit
//! orthogonal simplex, `gamma = j! * content`.
//!
//! Point sets are passed as flat row-major slices of `(j + 1) * dim` values.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Content threshold below which a simplex is treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// `|det|` below which the adjugate is assembled from cofactors instead of
/// `det * inverse`.
const ADJUGATE_COFACTOR_CUTOFF: f64 = 1e-300;

pub(crate) const FACTORIAL: [f64; 8] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0];

pub(crate) fn factorial(n: usize) -> f64 {
    FACTORIAL[n]
}

fn node_count(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || !points.len().is_multiple_of(dim) || points.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} coordinates do not form points of dimension {dim}",
            points.len()
        )));
    }
    let nodes = points.len() / dim;
    if nodes - 1 > dim {
        return Err(Error::DimensionMismatch(format!(
            "a {}-simplex does not fit in dimension {dim}",
            nodes - 1
        )));
    }
    Ok(nodes)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The bordered squared-distance matrix of a simplex.
pub fn cayley_menger_matrix(points: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    let nodes = node_count(points, dim)?;
    let size = nodes + 1;
    let mut b = DMatrix::zeros(size, size);
    for s in 1..size {
        b[(0, s)] = 1.0;
        b[(s, 0)] = 1.0;
    }
    for s in 0..nodes {
        for t in (s + 1)..nodes {
            let d2 = squared_distance(&points[s * dim..(s + 1) * dim], &points[t * dim..(t + 1) * dim]);
            b[(s + 1, t + 1)] = d2;
            b[(t + 1, s + 1)] = d2;
        }
    }
    Ok(b)
}

/// Adjugate of a square matrix, `det * inverse` when well conditioned and a
/// cofactor expansion otherwise.
pub fn adjugate(m: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = m.nrows();
    let lu = m.clone().lu();
    let det = lu.determinant();
    if det.abs() >= ADJUGATE_COFACTOR_CUTOFF {
        if let Some(inv) = lu.try_inverse() {
            return (det, inv * det);
        }
    }
    let mut adj = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let minor = m.clone().remove_row(r).remove_column(c);
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            // adj is the transposed cofactor matrix
            adj[(c, r)] = sign * minor.determinant();
        }
    }
    (det, adj)
}

fn content_from_det(det: f64, degree: usize) -> f64 {
    let sign = if (degree + 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    let f = factorial(degree);
    let value = sign * det / (2f64.powi(degree as i32) * f * f);
    value.max(0.0).sqrt()
}

/// Length, area or volume of the simplex spanned by `points`.
pub fn content(points: &[f64], dim: usize) -> Result<f64> {
    let nodes = node_count(points, dim)?;
    if nodes == 1 {
        return Ok(1.0);
    }
    let b = cayley_menger_matrix(points, dim)?;
    Ok(content_from_det(b.determinant(), nodes - 1))
}

/// `j! * content`; equals 1 for the unit orthogonal simplex of the same degree.
pub fn distortion_factor(points: &[f64], dim: usize) -> Result<f64> {
    let nodes = node_count(points, dim)?;
    Ok(factorial(nodes - 1) * content(points, dim)?)
}

/// Signed distortion factor `det([x_1, ..., x_j])` of the simplex formed by
/// the origin and `points`; its magnitude is [`distortion_factor`] of that
/// simplex. Requires exactly `dim` points.
pub fn signed_distortion(points: &[f64], dim: usize) -> Result<f64> {
    check_square(points, dim)?;
    Ok(det_columns(points, dim))
}

/// Gradient of [`signed_distortion`] with respect to each point, flat `dim * dim`.
pub fn signed_distortion_gradient(points: &[f64], dim: usize) -> Result<Vec<f64>> {
    check_square(points, dim)?;
    let p = |i: usize| &points[i * dim..(i + 1) * dim];
    let grad = match dim {
        1 => vec![1.0],
        2 => {
            let (a, b) = (p(0), p(1));
            vec![b[1], -b[0], -a[1], a[0]]
        }
        3 => {
            let (a, b, c) = (p(0), p(1), p(2));
            let mut g = Vec::with_capacity(9);
            g.extend_from_slice(&cross(b, c));
            g.extend_from_slice(&cross(c, a));
            g.extend_from_slice(&cross(a, b));
            g
        }
        _ => {
            let m = DMatrix::from_fn(dim, dim, |r, c| points[c * dim + r]);
            let (_, adj) = adjugate(&m);
            // d det / d M[r][c] = adj[c][r]; point c is column c
            (0..dim)
                .flat_map(|c| (0..dim).map(move |r| (c, r)))
                .map(|(c, r)| adj[(c, r)])
                .collect()
        }
    };
    Ok(grad)
}

fn check_square(points: &[f64], dim: usize) -> Result<()> {
    if dim == 0 || points.len() != dim * dim {
        return Err(Error::DimensionMismatch(format!(
            "signed distortion needs {dim} points of dimension {dim}, got {} coordinates",
            points.len()
        )));
    }
    Ok(())
}

pub(crate) fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn det_columns(points: &[f64], dim: usize) -> f64 {
    match dim {
        1 => points[0],
        2 => points[0] * points[3] - points[1] * points[2],
        3 => {
            let c = cross(&points[3..6], &points[6..9]);
            points[0] * c[0] + points[1] * c[1] + points[2] * c[2]
        }
        _ => DMatrix::from_fn(dim, dim, |r, c| points[c * dim + r]).determinant(),
    }
}

/// Cached per-element geometry: content, distortion and the Cayley-Menger
/// matrix together with its adjugate.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub degree: usize,
    pub content: f64,
    pub distortion: f64,
    pub cayley_menger: DMatrix<f64>,
    pub cm_adjugate: DMatrix<f64>,
}

impl ElementGeometry {
    pub fn new(points: &[f64], dim: usize) -> Result<Self> {
        let nodes = node_count(points, dim)?;
        let degree = nodes - 1;
        let cayley_menger = cayley_menger_matrix(points, dim)?;
        let (det, cm_adjugate) = adjugate(&cayley_menger);
        let content = if degree == 0 {
            1.0
        } else {
            content_from_det(det, degree)
        };
        Ok(Self {
            degree,
            content,
            distortion: factorial(degree) * content,
            cayley_menger,
            cm_adjugate,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.degree > 0 && self.content <= DEGENERACY_EPS
    }
}
