//! Analytic backward pass of the simplex NUFT.
//!
//! For node `p` of an element,
//! `dF/dx_p = rho i^j (Lambda k + Gamma sum_{m != p} A_pm D_pm)` with
//! `Lambda = gamma dS/dsigma_p`, `Gamma = ((-1)^(j+1) / 2^j) S / gamma`,
//! `A` the adjugate of the Cayley-Menger matrix (row/column `p + 1`, `m + 1`
//! with zero-based nodes) and `D_pm = 2 (x_p - x_m)`.
//!
//! A real loss `L` enters through a spectral cotangent `G` with
//! `dL = sum_m w(m) Re[conj(G(m)) dF(m)]`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::divided::{exp_divided_difference, MAX_NODES};
use crate::error::{Error, Result};
use crate::geometry::{self, ElementGeometry};
use crate::mesh::SimplexMesh;
use crate::nuft::{self, lagrange_terms, min_gap, sigma, times_i_pow, CONFLUENCE_EPS};
use crate::spectral::{SpectralField, SpectralGrid};

/// Gradient of a real loss with respect to mesh vertices and densities.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGradient {
    pub dim: usize,
    pub channels: usize,
    /// `n_vertices x dim`, row-major.
    pub d_vertices: Vec<f64>,
    /// `n_elements x channels`, row-major.
    pub d_densities: Vec<f64>,
    /// Elements skipped because their content fell below the degeneracy threshold.
    pub degenerate: Vec<usize>,
}

impl MeshGradient {
    pub fn zeros(mesh: &SimplexMesh) -> Self {
        Self {
            dim: mesh.dim(),
            channels: mesh.channels(),
            d_vertices: vec![0.0; mesh.vertices().len()],
            d_densities: vec![0.0; mesh.densities().len()],
            degenerate: Vec::new(),
        }
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.d_vertices[v * self.dim..(v + 1) * self.dim]
    }

    /// Largest absolute entry over vertices and densities.
    pub fn max_abs(&self) -> f64 {
        self.d_vertices
            .iter()
            .chain(&self.d_densities)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry-wise difference divided by the largest entry of `reference`.
    pub fn max_relative_error(&self, reference: &MeshGradient) -> f64 {
        let diff = self
            .d_vertices
            .iter()
            .zip(&reference.d_vertices)
            .chain(self.d_densities.iter().zip(&reference.d_densities))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = reference.max_abs();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    fn add_assign(&mut self, other: &MeshGradient) {
        for (a, b) in self.d_vertices.iter_mut().zip(&other.d_vertices) {
            *a += b;
        }
        for (a, b) in self.d_densities.iter_mut().zip(&other.d_densities) {
            *a += b;
        }
    }
}

/// `(-1)^(j+1) / 2^j`.
fn cm_sign_scale(degree: usize) -> f64 {
    let sign = if (degree + 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    sign / 2f64.powi(degree as i32)
}

/// `sum_{m != p} A_pm D_pm` for every node `p`, flat `(j+1) x dim`.
fn adjugate_sums(points: &[f64], dim: usize, geo: &ElementGeometry) -> Vec<f64> {
    let nodes = geo.degree + 1;
    let mut out = vec![0.0; nodes * dim];
    for p in 0..nodes {
        for m in 0..nodes {
            if m == p {
                continue;
            }
            let a = geo.cm_adjugate[(p + 1, m + 1)];
            for ax in 0..dim {
                out[p * dim + ax] += a * 2.0 * (points[p * dim + ax] - points[m * dim + ax]);
            }
        }
    }
    out
}

/// Derivative of the distortion factor with respect to node `p`.
pub fn dgamma_dx(points: &[f64], dim: usize, p: usize) -> Result<Vec<f64>> {
    let geo = ElementGeometry::new(points, dim)?;
    if p > geo.degree {
        return Err(Error::InvalidArgument(format!(
            "node {p} out of range for degree {}",
            geo.degree
        )));
    }
    if geo.degree == 0 {
        return Ok(vec![0.0; dim]);
    }
    if geo.is_degenerate() {
        return Err(Error::DegenerateElement(0));
    }
    let sums = adjugate_sums(points, dim, &geo);
    let scale = cm_sign_scale(geo.degree) / geo.distortion;
    Ok(sums[p * dim..(p + 1) * dim].iter().map(|v| v * scale).collect())
}

/// `dS/dsigma_p`: Lemma-form sum for well separated phases, otherwise the
/// divided difference with `sigma_p` repeated.
pub fn ds_dsigma(sigmas: &[f64], p: usize) -> Complex64 {
    if min_gap(sigmas) > CONFLUENCE_EPS {
        let mut terms = [Complex64::new(0.0, 0.0); MAX_NODES];
        let terms = &mut terms[..sigmas.len()];
        lagrange_terms(sigmas, terms);
        lemma_coefficient(sigmas, terms, p)
    } else {
        confluent_coefficient(sigmas, p)
    }
}

#[inline]
fn lemma_coefficient(sigmas: &[f64], terms: &[Complex64], p: usize) -> Complex64 {
    let sp = terms[p];
    let mut acc = Complex64::new(sp.im, -sp.re); // -i S_p
    for (t, &st) in terms.iter().enumerate() {
        if t != p {
            acc += (st + sp) / (sigmas[t] - sigmas[p]);
        }
    }
    acc
}

#[inline]
fn confluent_coefficient(sigmas: &[f64], p: usize) -> Complex64 {
    let n = sigmas.len();
    let mut nodes = [0.0; MAX_NODES];
    nodes[..n].copy_from_slice(sigmas);
    nodes[n] = sigmas[p];
    exp_divided_difference(&nodes[..=n])
}

/// `dS/dx_p` as a complex `dim`-vector.
pub fn ds_dx(sigmas: &[f64], p: usize, k: &[f64]) -> Vec<Complex64> {
    let c = ds_dsigma(sigmas, p);
    k.iter().map(|&ka| c * ka).collect()
}

fn element_sigmas(points: &[f64], dim: usize, k: &[f64]) -> Vec<f64> {
    points.chunks(dim).map(|x| sigma(k, x)).collect()
}

/// `dF/dx_p` in the `(Lambda, Gamma)` form.
pub fn df_dx(points: &[f64], dim: usize, density: f64, k: &[f64], p: usize) -> Result<Vec<Complex64>> {
    let geo = ElementGeometry::new(points, dim)?;
    let degree = geo.degree;
    if geo.is_degenerate() {
        return Err(Error::DegenerateElement(0));
    }
    let sig = element_sigmas(points, dim, k);
    let s = nuft::eval_s(&sig);
    let lambda = ds_dsigma(&sig, p) * geo.distortion;
    let gamma_term = if degree == 0 {
        Complex64::new(0.0, 0.0)
    } else {
        s * (cm_sign_scale(degree) / geo.distortion)
    };
    let sums = if degree == 0 {
        vec![0.0; dim]
    } else {
        adjugate_sums(points, dim, &geo)[p * dim..(p + 1) * dim].to_vec()
    };
    Ok((0..dim)
        .map(|a| times_i_pow(lambda * k[a] + gamma_term * sums[a], degree) * density)
        .collect())
}

/// `dF/dx_p = rho i^j (S dgamma/dx_p + gamma dS/dx_p)`, assembled from the
/// two lemmas independently of [`df_dx`].
pub fn df_dx_product_rule(points: &[f64], dim: usize, density: f64, k: &[f64], p: usize) -> Result<Vec<Complex64>> {
    let gamma = geometry::distortion_factor(points, dim)?;
    let degree = points.len() / dim - 1;
    let dgamma = dgamma_dx(points, dim, p)?;
    let sig = element_sigmas(points, dim, k);
    let s = nuft::eval_s(&sig);
    let ds = ds_dx(&sig, p, k);
    Ok((0..dim)
        .map(|a| times_i_pow(s * dgamma[a] + ds[a] * gamma, degree) * density)
        .collect())
}

/// `dF/drho = i^j gamma S`.
pub fn df_drho(points: &[f64], dim: usize, k: &[f64]) -> Result<Complex64> {
    nuft::forward_element(points, dim, 1.0, k)
}

/// Per-element data for the backward sweep. `geo_grad[p]` scaled by
/// `geo_scale` is the derivative of the (signed) distortion factor with
/// respect to node `p`.
struct BackElement {
    nodes: Vec<Option<usize>>,
    points: Vec<f64>,
    gamma: f64,
    geo_scale: f64,
    geo_grad: Vec<f64>,
    densities: Vec<f64>,
    index: usize,
}

/// Modes per parallel work item; fixed so the reduction order never depends
/// on the thread count.
const MODE_CHUNK: usize = 64;

fn sweep(
    grid: &SpectralGrid,
    cotangent: &SpectralField,
    elements: &[BackElement],
    template: &MeshGradient,
    degree: usize,
) -> MeshGradient {
    let dim = grid.dim();
    let channels = template.channels;
    let n_modes = grid.n_modes();
    let n_chunks = n_modes.div_ceil(MODE_CHUNK);
    let partials: Vec<MeshGradient> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = template.clone();
            let mut sig = [0.0; MAX_NODES];
            let mut terms = [Complex64::new(0.0, 0.0); MAX_NODES];
            let nodes = degree + 1;
            for mode in chunk * MODE_CHUNK..((chunk + 1) * MODE_CHUNK).min(n_modes) {
                let w = grid.fold_weight(mode);
                let kv = grid.wavevector(mode);
                let k = &kv[..dim];
                let g = &cotangent.coeffs[mode * channels..(mode + 1) * channels];
                for el in elements {
                    for t in 0..nodes {
                        sig[t] = sigma(k, &el.points[t * dim..(t + 1) * dim]);
                    }
                    let sig = &sig[..nodes];
                    let separated = min_gap(sig) > CONFLUENCE_EPS;
                    let s = if separated {
                        lagrange_terms(sig, &mut terms[..nodes]);
                        terms[..nodes].iter().sum()
                    } else {
                        exp_divided_difference(sig)
                    };

                    // dF/drho_c = i^j gamma S
                    let f_unit = times_i_pow(s, degree) * el.gamma;
                    let mut z = Complex64::new(0.0, 0.0);
                    for (ch, gc) in g.iter().enumerate() {
                        acc.d_densities[el.index * channels + ch] += w * (gc.conj() * f_unit).re;
                        z += gc.conj() * el.densities[ch];
                    }
                    if el.geo_scale == 0.0 && el.gamma == 0.0 {
                        continue;
                    }
                    let zi = times_i_pow(z * w, degree);
                    let gamma_coef = (zi * s).re * el.geo_scale;
                    for p in 0..nodes {
                        let Some(v) = el.nodes[p] else { continue };
                        let c = if separated {
                            lemma_coefficient(sig, &terms[..nodes], p)
                        } else {
                            confluent_coefficient(sig, p)
                        };
                        let lambda_coef = (zi * c).re * el.gamma;
                        let out = &mut acc.d_vertices[v * dim..(v + 1) * dim];
                        let gg = &el.geo_grad[p * dim..(p + 1) * dim];
                        for a in 0..dim {
                            out[a] += lambda_coef * k[a] + gamma_coef * gg[a];
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = template.clone();
    for part in &partials {
        total.add_assign(part);
    }
    total
}

fn check_cotangent(mesh: &SimplexMesh, grid: &SpectralGrid, cotangent: &SpectralField) -> Result<()> {
    if cotangent.grid != *grid {
        return Err(Error::GridMismatch("cotangent was built on a different grid".into()));
    }
    if cotangent.channels != mesh.channels() {
        return Err(Error::GridMismatch(format!(
            "cotangent has {} channels, mesh has {}",
            cotangent.channels,
            mesh.channels()
        )));
    }
    if mesh.dim() != grid.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mesh is {}D but grid is {}D",
            mesh.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Pulls a spectral cotangent back to vertex and density gradients of a
/// simplex mesh. In strict mode a degenerate element is an error; otherwise
/// it contributes no vertex gradient and is listed in
/// [`MeshGradient::degenerate`].
pub fn backward_mesh(
    mesh: &SimplexMesh,
    grid: &SpectralGrid,
    cotangent: &SpectralField,
    strict: bool,
) -> Result<MeshGradient> {
    check_cotangent(mesh, grid, cotangent)?;
    mesh.ensure_valid(false)?;
    let dim = mesh.dim();
    let degree = mesh.degree();
    let mut template = MeshGradient::zeros(mesh);
    let mut elements = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let points = mesh.element_points(e);
        let geo = ElementGeometry::new(&points, dim)?;
        let mut nodes: Vec<Option<usize>> = mesh.element(e).iter().map(|&v| Some(v)).collect();
        let (geo_scale, geo_grad) = if degree == 0 {
            (0.0, vec![0.0; dim])
        } else if geo.is_degenerate() {
            if strict {
                return Err(Error::DegenerateElement(e));
            }
            template.degenerate.push(e);
            nodes.iter_mut().for_each(|n| *n = None);
            (0.0, vec![0.0; nodes.len() * dim])
        } else {
            (
                cm_sign_scale(degree) / geo.distortion,
                adjugate_sums(&points, dim, &geo),
            )
        };
        elements.push(BackElement {
            nodes,
            points,
            gamma: geo.distortion,
            geo_scale,
            geo_grad,
            densities: mesh.density(e).to_vec(),
            index: e,
        });
    }
    Ok(sweep(grid, cotangent, &elements, &template, degree))
}

/// Backward pass of [`nuft::forward_auxnode`]. The auxiliary origin node is
/// held fixed; the signed distortion factor is differentiated through its
/// determinant, which stays smooth when an auxiliary simplex flattens.
pub fn backward_auxnode(
    boundary: &SimplexMesh,
    grid: &SpectralGrid,
    cotangent: &SpectralField,
) -> Result<MeshGradient> {
    check_cotangent(boundary, grid, cotangent)?;
    nuft::check_boundary(boundary, grid)?;
    boundary.ensure_valid(false)?;
    let dim = boundary.dim();
    let template = MeshGradient::zeros(boundary);
    let elements = (0..boundary.n_elements())
        .map(|e| {
            let rel = boundary.element_points(e);
            let gamma = geometry::signed_distortion(&rel, dim)?;
            let mut geo_grad = vec![0.0; dim];
            geo_grad.extend(geometry::signed_distortion_gradient(&rel, dim)?);
            let mut points = vec![0.0; dim];
            points.extend_from_slice(&rel);
            let mut nodes = vec![None];
            nodes.extend(boundary.element(e).iter().map(|&v| Some(v)));
            Ok(BackElement {
                nodes,
                points,
                gamma,
                geo_scale: 1.0,
                geo_grad,
                densities: boundary.density(e).to_vec(),
                index: e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep(grid, cotangent, &elements, &template, dim))
}

/// Which forward transform a numeric gradient differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardKind {
    Simplex,
    AuxNode,
}

fn forward(kind: ForwardKind, mesh: &SimplexMesh, grid: &SpectralGrid) -> Result<SpectralField> {
    match kind {
        ForwardKind::Simplex => nuft::forward_mesh(mesh, grid, false),
        ForwardKind::AuxNode => nuft::forward_auxnode(mesh, grid, false),
    }
}

/// Central-difference gradient of `<G, F(mesh)>`, re-running the full forward
/// transform twice per coordinate and per density.
pub fn numeric_backward(
    mesh: &SimplexMesh,
    grid: &SpectralGrid,
    cotangent: &SpectralField,
    h: f64,
) -> Result<MeshGradient> {
    numeric_backward_with(ForwardKind::Simplex, mesh, grid, cotangent, h)
}

pub fn numeric_backward_with(
    kind: ForwardKind,
    mesh: &SimplexMesh,
    grid: &SpectralGrid,
    cotangent: &SpectralField,
    h: f64,
) -> Result<MeshGradient> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    check_cotangent(mesh, grid, cotangent)?;
    let objective = |m: &SimplexMesh| -> Result<f64> { cotangent.pair(&forward(kind, m, grid)?) };
    let mut out = MeshGradient::zeros(mesh);
    let mut probe = mesh.clone();
    for i in 0..mesh.vertices().len() {
        let x0 = mesh.vertices()[i];
        probe.vertices_mut()[i] = x0 + h;
        let up = objective(&probe)?;
        probe.vertices_mut()[i] = x0 - h;
        let down = objective(&probe)?;
        probe.vertices_mut()[i] = x0;
        out.d_vertices[i] = (up - down) / (2.0 * h);
    }
    for i in 0..mesh.densities().len() {
        let r0 = mesh.densities()[i];
        probe.densities_mut()[i] = r0 + h;
        let up = objective(&probe)?;
        probe.densities_mut()[i] = r0 - h;
        let down = objective(&probe)?;
        probe.densities_mut()[i] = r0;
        out.d_densities[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}
