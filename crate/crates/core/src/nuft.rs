//! Forward simplex NUFT.
//!
//! For a `j`-simplex with nodes `x_t`, density `rho` and distortion factor
//! `gamma`, the Fourier coefficient at wavevector `k` is
//! `rho * i^j * gamma * S` with `S` the divided difference of `exp(-i s)` over
//! the node phases `sigma_t = k . x_t`. When every pair of phases is at least
//! [`CONFLUENCE_EPS`] apart `S` is evaluated in Lagrange form; otherwise the
//! stable divided-difference routine takes over, which also covers exactly
//! coincident phases (axis-aligned edges, the DC mode).

use num_complex::Complex64;
use rayon::prelude::*;

use crate::divided::{cis_neg, exp_divided_difference, MAX_NODES};
use crate::error::{Error, Result};
use crate::geometry;
use crate::mesh::SimplexMesh;
use crate::spectral::{SpectralField, SpectralGrid};

/// Minimum pairwise phase gap (radians) for the Lagrange form.
pub const CONFLUENCE_EPS: f64 = 0.1;

/// Multiplies by `i^j` exactly.
#[inline]
pub fn times_i_pow(z: Complex64, j: usize) -> Complex64 {
    match j % 4 {
        0 => z,
        1 => Complex64::new(-z.im, z.re),
        2 => -z,
        _ => Complex64::new(z.im, -z.re),
    }
}

/// Phase `k . x`.
#[inline]
pub fn sigma(k: &[f64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Smallest pairwise distance between phases (infinite for a single phase).
#[inline]
pub fn min_gap(sigmas: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for (t, a) in sigmas.iter().enumerate() {
        for b in &sigmas[t + 1..] {
            gap = gap.min((a - b).abs());
        }
    }
    gap
}

/// Lagrange terms `S_t = exp(-i sigma_t) / prod_{l != t} (sigma_t - sigma_l)`.
pub fn lagrange_terms(sigmas: &[f64], out: &mut [Complex64]) {
    for (t, &st) in sigmas.iter().enumerate() {
        let mut denom = 1.0;
        for (l, &sl) in sigmas.iter().enumerate() {
            if l != t {
                denom *= st - sl;
            }
        }
        out[t] = cis_neg(st) / denom;
    }
}

/// The summation term `S` for the given node phases.
pub fn eval_s(sigmas: &[f64]) -> Complex64 {
    if min_gap(sigmas) > CONFLUENCE_EPS {
        let mut terms = [Complex64::new(0.0, 0.0); MAX_NODES];
        lagrange_terms(sigmas, &mut terms[..sigmas.len()]);
        terms[..sigmas.len()].iter().sum()
    } else {
        exp_divided_difference(sigmas)
    }
}

/// Coefficient of one simplex with nodes `points` (flat, `dim` per node) at
/// wavevector `k`.
pub fn forward_element(points: &[f64], dim: usize, density: f64, k: &[f64]) -> Result<Complex64> {
    let gamma = geometry::distortion_factor(points, dim)?;
    let degree = points.len() / dim - 1;
    Ok(element_value(points, dim, degree, gamma, k) * density)
}

#[inline]
fn element_value(points: &[f64], dim: usize, degree: usize, gamma: f64, k: &[f64]) -> Complex64 {
    let mut sig = [0.0; MAX_NODES];
    for (t, s) in sig[..=degree].iter_mut().enumerate() {
        *s = sigma(k, &points[t * dim..(t + 1) * dim]);
    }
    times_i_pow(eval_s(&sig[..=degree]), degree) * gamma
}

/// Element data reused across modes.
struct Prepared {
    points: Vec<f64>,
    gamma: f64,
    densities: Vec<f64>,
}

fn accumulate(grid: SpectralGrid, channels: usize, nodes: usize, elements: &[Prepared]) -> SpectralField {
    let dim = grid.dim();
    let degree = nodes - 1;
    let mut field = SpectralField::zeros(grid, channels);
    field
        .coeffs
        .par_chunks_mut(channels)
        .enumerate()
        .for_each(|(mode, out)| {
            let k = grid.wavevector(mode);
            let k = &k[..dim];
            for el in elements {
                let v = element_value(&el.points, dim, degree, el.gamma, k);
                for (o, rho) in out.iter_mut().zip(&el.densities) {
                    *o += v * rho;
                }
            }
        });
    field
}

fn check_dims(mesh: &SimplexMesh, grid: &SpectralGrid) -> Result<()> {
    if mesh.dim() != grid.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mesh is {}D but grid is {}D",
            mesh.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Sum of element coefficients over the whole mesh at every stored mode.
pub fn forward_mesh(mesh: &SimplexMesh, grid: &SpectralGrid, strict: bool) -> Result<SpectralField> {
    check_dims(mesh, grid)?;
    mesh.ensure_valid(strict)?;
    let dim = mesh.dim();
    let elements = (0..mesh.n_elements())
        .map(|e| {
            let points = mesh.element_points(e);
            let gamma = geometry::distortion_factor(&points, dim)?;
            Ok(Prepared {
                points,
                gamma,
                densities: mesh.density(e).to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(accumulate(*grid, mesh.channels(), mesh.arity(), &elements))
}

/// Checks that a boundary mesh describes a `(degree + 1)`-polytope in
/// matching dimension.
pub(crate) fn check_boundary(boundary: &SimplexMesh, grid: &SpectralGrid) -> Result<()> {
    check_dims(boundary, grid)?;
    if boundary.degree() + 1 != boundary.dim() {
        return Err(Error::DimensionMismatch(format!(
            "auxiliary-node transform needs a boundary of degree d-1, got degree {} in {}D",
            boundary.degree(),
            boundary.dim()
        )));
    }
    Ok(())
}

/// Boundary nodes relative to an auxiliary node, flat `dim * dim`.
pub(crate) fn relative_points(boundary: &SimplexMesh, e: usize, aux: &[f64]) -> Vec<f64> {
    let dim = boundary.dim();
    let mut pts = boundary.element_points(e);
    for (i, p) in pts.iter_mut().enumerate() {
        *p -= aux[i % dim];
    }
    pts
}

/// Signed enclosed content of a boundary mesh, measured with the auxiliary
/// node at `aux`.
pub fn signed_enclosed_content(boundary: &SimplexMesh, aux: &[f64]) -> Result<f64> {
    let dim = boundary.dim();
    let mut total = 0.0;
    for e in 0..boundary.n_elements() {
        total += geometry::signed_distortion(&relative_points(boundary, e, aux), dim)?;
    }
    Ok(total / geometry::factorial(dim))
}

/// Auxiliary node used for the strict-mode watertightness probe.
const PROBE_NODE: [f64; 3] = [0.377, 0.613, 0.291];

/// Transform of the uniform polytope bounded by a watertight, consistently
/// oriented `(d-1)`-simplex mesh, using the origin as auxiliary node.
///
/// Each boundary element together with the origin spans an auxiliary
/// `d`-simplex whose signed distortion factor weights its contribution;
/// interior contributions cancel. Densities of boundary elements scale their
/// auxiliary simplices. A clockwise (inward) orientation negates the field.
pub fn forward_auxnode(boundary: &SimplexMesh, grid: &SpectralGrid, strict: bool) -> Result<SpectralField> {
    check_boundary(boundary, grid)?;
    boundary.ensure_valid(false)?;
    let dim = boundary.dim();
    if strict {
        let with_origin = signed_enclosed_content(boundary, &[0.0; 3][..dim])?;
        let with_shift = signed_enclosed_content(boundary, &PROBE_NODE[..dim])?;
        if (with_origin - with_shift).abs() > 1e-9 * (1.0 + with_origin.abs()) {
            return Err(Error::NotWatertight {
                with_origin,
                with_shift,
            });
        }
    }
    let origin = vec![0.0; dim];
    let elements = (0..boundary.n_elements())
        .map(|e| {
            let rel = boundary.element_points(e);
            let gamma = geometry::signed_distortion(&rel, dim)?;
            let mut points = origin.clone();
            points.extend_from_slice(&rel);
            Ok(Prepared {
                points,
                gamma,
                densities: boundary.density(e).to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(accumulate(*grid, boundary.channels(), dim + 1, &elements))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_grid;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn sigma_examples() {
        assert!((sigma(&[2.0 * PI, 0.0], &[0.5, 0.3]) - PI).abs() < 1e-15);
        assert_eq!(sigma(&[0.0, 0.0], &[0.7, 0.9]), 0.0);
        assert!((sigma(&[2.0 * PI, 2.0 * PI], &[0.25, 0.25]) - PI).abs() < 1e-15);
    }

    #[test]
    fn eval_s_examples() {
        assert!((eval_s(&[PI]) - c(-1.0, 0.0)).norm() < 1e-15);
        assert!((eval_s(&[0.0, PI]) - c(-2.0 / PI, 0.0)).norm() < 1e-15);
        assert_eq!(eval_s(&[0.0, 0.0, 0.0]), c(-0.5, 0.0));
    }

    #[test]
    fn i_power_cycle() {
        let z = c(2.0, 3.0);
        assert_eq!(times_i_pow(z, 0), z);
        assert_eq!(times_i_pow(z, 1), c(-3.0, 2.0));
        assert_eq!(times_i_pow(z, 2), c(-2.0, -3.0));
        assert_eq!(times_i_pow(z, 3), c(3.0, -2.0));
        assert_eq!(times_i_pow(z, 5), times_i_pow(z, 1));
    }

    #[test]
    fn dc_of_unit_triangle() {
        let v = forward_element(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0], 2, 1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(v, c(0.5, 0.0));
    }

    #[test]
    fn point_is_plane_wave() {
        let x = [0.3, 0.8];
        let k = [2.0 * PI * 3.0, -2.0 * PI];
        let v = forward_element(&x, 2, 1.0, &k).unwrap();
        assert!((v - cis_neg(sigma(&k, &x))).norm() < 1e-15);
    }

    #[test]
    fn empty_mesh_is_zero_field() {
        let g = build_grid(2, 8).unwrap();
        let f = forward_mesh(&SimplexMesh::empty(2, 2), &g, true).unwrap();
        assert!(f.coeffs.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn disjoint_triangles_add() {
        let g = build_grid(2, 8).unwrap();
        let a = SimplexMesh::with_unit_density(2, 2, vec![0.1, 0.1, 0.4, 0.1, 0.1, 0.3], vec![0, 1, 2]).unwrap();
        let b = SimplexMesh::with_unit_density(2, 2, vec![0.6, 0.6, 0.9, 0.7, 0.7, 0.9], vec![0, 1, 2]).unwrap();
        let both = SimplexMesh::with_unit_density(
            2,
            2,
            vec![0.1, 0.1, 0.4, 0.1, 0.1, 0.3, 0.6, 0.6, 0.9, 0.7, 0.7, 0.9],
            vec![0, 1, 2, 3, 4, 5],
        )
        .unwrap();
        let fa = forward_mesh(&a, &g, true).unwrap();
        let fb = forward_mesh(&b, &g, true).unwrap();
        let fab = forward_mesh(&both, &g, true).unwrap();
        for i in 0..fab.coeffs.len() {
            assert!((fab.coeffs[i] - fa.coeffs[i] - fb.coeffs[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn unit_triangle_mass() {
        let g = build_grid(2, 8).unwrap();
        let m = SimplexMesh::with_unit_density(2, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2]).unwrap();
        let f = forward_mesh(&m, &g, false).unwrap();
        assert_eq!(f.dc(0), c(0.5, 0.0));
    }

    fn unit_square_boundary(ccw: bool) -> SimplexMesh {
        let verts = vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let elems = if ccw {
            vec![0, 1, 1, 2, 2, 3, 3, 0]
        } else {
            vec![1, 0, 2, 1, 3, 2, 0, 3]
        };
        SimplexMesh::with_unit_density(2, 1, verts, elems).unwrap()
    }

    #[test]
    fn auxnode_square_area_and_orientation() {
        let g = build_grid(2, 8).unwrap();
        let ccw = forward_auxnode(&unit_square_boundary(true), &g, true).unwrap();
        assert!((ccw.dc(0) - c(1.0, 0.0)).norm() < 1e-15);
        let cw = forward_auxnode(&unit_square_boundary(false), &g, true).unwrap();
        for (a, b) in ccw.coeffs.iter().zip(&cw.coeffs) {
            assert!((a + b).norm() < 1e-14);
        }
    }

    #[test]
    fn auxnode_square_matches_two_triangles() {
        let g = build_grid(2, 8).unwrap();
        let b = SimplexMesh::with_unit_density(
            2,
            1,
            vec![0.2, 0.1, 0.8, 0.15, 0.75, 0.7, 0.15, 0.8],
            vec![0, 1, 1, 2, 2, 3, 3, 0],
        )
        .unwrap();
        let t = SimplexMesh::with_unit_density(2, 2, b.vertices().to_vec(), vec![0, 1, 2, 0, 2, 3]).unwrap();
        let fa = forward_auxnode(&b, &g, true).unwrap();
        let ft = forward_mesh(&t, &g, true).unwrap();
        for (a, b) in fa.coeffs.iter().zip(&ft.coeffs) {
            assert!((a - b).norm() <= 1e-9 * b.norm().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn open_boundary_rejected_in_strict_mode() {
        let g = build_grid(2, 4).unwrap();
        let open = SimplexMesh::with_unit_density(2, 1, vec![0.1, 0.1, 0.8, 0.1, 0.5, 0.7], vec![0, 1, 1, 2]).unwrap();
        assert!(matches!(
            forward_auxnode(&open, &g, true),
            Err(Error::NotWatertight { .. })
        ));
        assert!(forward_auxnode(&open, &g, false).is_ok());
    }

    #[test]
    fn auxnode_requires_codimension_one() {
        let g = build_grid(2, 4).unwrap();
        let tri = SimplexMesh::with_unit_density(2, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2]).unwrap();
        assert!(matches!(
            forward_auxnode(&tri, &g, false),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mesh_grid_dimension_mismatch() {
        let g = build_grid(3, 4).unwrap();
        let tri = SimplexMesh::with_unit_density(2, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2]).unwrap();
        assert!(forward_mesh(&tri, &g, false).is_err());
    }
}
