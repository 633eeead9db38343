//! End-to-end rasterization (transform, filter, synthesis), its backward
//! pass, and polygon losses.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{backward_auxnode, backward_mesh, MeshGradient};
use crate::mesh::SimplexMesh;
use crate::nuft::{forward_auxnode, forward_mesh};
use crate::spectral::{
    adjoint_transform, apply_filter, build_grid, inverse_transform, GaussianFilter, Raster, SpectralGrid,
};

/// How a mesh is turned into spectral coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The mesh elements themselves carry the signal.
    #[default]
    Simplex,
    /// The mesh is the oriented boundary of the region carrying the signal.
    AuxNode,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplex" => Ok(Mode::Simplex),
            "auxnode" => Ok(Mode::AuxNode),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?}, expected simplex or auxnode"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterizeConfig {
    pub resolution: usize,
    pub filter: GaussianFilter,
    pub mode: Mode,
    pub strict: bool,
}

impl RasterizeConfig {
    pub fn new(resolution: usize, filter_width: f64, mode: Mode) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "resolution must be at least 2, got {resolution}"
            )));
        }
        Ok(Self {
            resolution,
            filter: GaussianFilter::new(filter_width)?,
            mode,
            strict: false,
        })
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    fn grid(&self, dim: usize) -> Result<SpectralGrid> {
        build_grid(dim, self.resolution)
    }
}

pub fn rasterize(mesh: &SimplexMesh, config: &RasterizeConfig) -> Result<Raster> {
    let grid = config.grid(mesh.dim())?;
    let field = match config.mode {
        Mode::Simplex => forward_mesh(mesh, &grid, config.strict)?,
        Mode::AuxNode => forward_auxnode(mesh, &grid, config.strict)?,
    };
    Ok(inverse_transform(&apply_filter(&field, &config.filter)))
}

/// Gradient of `sum(cotangent * rasterize(mesh))` with respect to the mesh.
pub fn rasterize_backward(mesh: &SimplexMesh, config: &RasterizeConfig, cotangent: &Raster) -> Result<MeshGradient> {
    if cotangent.dim != mesh.dim() || cotangent.resolution != config.resolution || cotangent.channels != mesh.channels()
    {
        return Err(Error::GridMismatch(format!(
            "cotangent raster is {}D, R={}, {} channels; expected {}D, R={}, {} channels",
            cotangent.dim,
            cotangent.resolution,
            cotangent.channels,
            mesh.dim(),
            config.resolution,
            mesh.channels()
        )));
    }
    let grid = config.grid(mesh.dim())?;
    let g = apply_filter(&adjoint_transform(cotangent)?, &config.filter);
    match config.mode {
        Mode::Simplex => backward_mesh(mesh, &grid, &g, config.strict),
        Mode::AuxNode => backward_auxnode(mesh, &grid, &g),
    }
}

/// Closed planar polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        Ok(Self { vertices })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
            / 2.0
    }

    /// `1` for counter-clockwise, `-1` for clockwise.
    pub fn orientation(&self) -> f64 {
        if self.signed_area() < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Boundary as a segment mesh oriented counter-clockwise. Vertex `i` of the
    /// mesh is vertex `i` of the polygon, so gradients map back directly.
    pub fn boundary_mesh(&self) -> Result<SimplexMesh> {
        let n = self.len();
        let ccw = self.orientation() > 0.0;
        let elements = (0..n)
            .flat_map(|i| {
                let j = (i + 1) % n;
                if ccw {
                    [i, j]
                } else {
                    [j, i]
                }
            })
            .collect();
        SimplexMesh::with_unit_density(2, 1, self.vertices.iter().flatten().copied().collect(), elements)
    }

    pub fn translated(&self, t: [f64; 2]) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| [v[0] + t[0], v[1] + t[1]]).collect(),
        }
    }
}

/// Rasterizes a polygon's interior at unit density.
pub fn rasterize_polygon(polygon: &Polygon, resolution: usize, filter: &GaussianFilter) -> Result<Raster> {
    let config = RasterizeConfig {
        resolution,
        filter: *filter,
        mode: Mode::AuxNode,
        strict: false,
    };
    rasterize(&polygon.boundary_mesh()?, &config)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum over `(candidate, resolution)` pairs of the L1 distance between the
/// candidate's and the target's rasters at that resolution. Returns the loss
/// and one vertex gradient per candidate.
pub fn loss_mres(
    candidates: &[(Polygon, usize)],
    target: &Polygon,
    filter: &GaussianFilter,
) -> Result<(f64, Vec<Vec<[f64; 2]>>)> {
    let target_mesh = target.boundary_mesh()?;
    let parts = candidates
        .par_iter()
        .map(|(poly, res)| {
            let config = RasterizeConfig {
                resolution: *res,
                filter: *filter,
                mode: Mode::AuxNode,
                strict: false,
            };
            let mesh = poly.boundary_mesh()?;
            let a = rasterize(&mesh, &config)?;
            let b = rasterize(&target_mesh, &config)?;
            let mut loss = 0.0;
            let mut cot = Raster::zeros(2, *res, 1);
            for ((c, x), y) in cot.values.iter_mut().zip(&a.values).zip(&b.values) {
                loss += (x - y).abs();
                *c = sign(x - y);
            }
            let grad = rasterize_backward(&mesh, &config, &cot)?;
            Ok((loss, grad.d_vertices.chunks(2).map(|v| [v[0], v[1]]).collect()))
        })
        .collect::<Result<Vec<(f64, Vec<[f64; 2]>)>>>()?;
    let loss = parts.iter().map(|p| p.0).sum();
    Ok((loss, parts.into_iter().map(|p| p.1).collect()))
}

/// Interior angle at every vertex, in `(0, 2 pi)`.
pub fn interior_angles(polygon: &Polygon) -> Result<Vec<f64>> {
    Ok(angle_terms(polygon)?.into_iter().map(|t| t.angle).collect())
}

struct AngleTerm {
    angle: f64,
    /// `d angle / d (prev - cur)` and `d angle / d (next - cur)`.
    d_prev: [f64; 2],
    d_next: [f64; 2],
}

fn angle_terms(polygon: &Polygon) -> Result<Vec<AngleTerm>> {
    let n = polygon.len();
    let s = polygon.orientation();
    let v = &polygon.vertices;
    (0..n)
        .map(|i| {
            let (a, b, c) = (v[(i + n - 1) % n], v[i], v[(i + 1) % n]);
            let e1 = [a[0] - b[0], a[1] - b[1]];
            let e2 = [c[0] - b[0], c[1] - b[1]];
            if e1 == [0.0, 0.0] || e2 == [0.0, 0.0] {
                return Err(Error::InvalidPolygon(format!("vertex {i} repeats a neighbour")));
            }
            // angle swept from e2 to e1 on the interior side
            let y = s * (e2[0] * e1[1] - e2[1] * e1[0]);
            let x = e2[0] * e1[0] + e2[1] * e1[1];
            let r2 = x * x + y * y;
            let angle = y.atan2(x).rem_euclid(2.0 * PI);
            let d_prev = [(x * -s * e2[1] - y * e2[0]) / r2, (x * s * e2[0] - y * e2[1]) / r2];
            let d_next = [(x * s * e1[1] - y * e1[0]) / r2, (x * -s * e1[0] - y * e1[1]) / r2];
            Ok(AngleTerm { angle, d_prev, d_next })
        })
        .collect()
}

/// `mean_j (A_j / pi - 1)^2` over interior angles `A_j`, with its vertex gradient.
pub fn loss_smooth(polygon: &Polygon) -> Result<(f64, Vec<[f64; 2]>)> {
    let n = polygon.len();
    let terms = angle_terms(polygon)?;
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 2]; n];
    for (i, t) in terms.iter().enumerate() {
        let r = t.angle / PI - 1.0;
        loss += r * r;
        let dl = 2.0 * r / (PI * n as f64);
        let (p, q) = ((i + n - 1) % n, (i + 1) % n);
        for a in 0..2 {
            grad[p][a] += dl * t.d_prev[a];
            grad[q][a] += dl * t.d_next[a];
            grad[i][a] -= dl * (t.d_prev[a] + t.d_next[a]);
        }
    }
    Ok((loss / n as f64, grad))
}

/// Inserts after every vertex the midpoint of the following edge, pushed by
/// `deltas[i]` along that edge's outward unit normal.
pub fn polygon_subdivide(polygon: &Polygon, deltas: &[f64]) -> Result<Polygon> {
    let n = polygon.len();
    if deltas.len() != n {
        return Err(Error::InvalidArgument(format!("{} deltas for {n} edges", deltas.len())));
    }
    let s = polygon.orientation();
    let mut out = Vec::with_capacity(2 * n);
    for (i, &delta) in deltas.iter().enumerate() {
        let (a, b) = (polygon.vertices[i], polygon.vertices[(i + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        let normal = if len > 0.0 {
            [s * dy / len, -s * dx / len]
        } else {
            [0.0, 0.0]
        };
        out.push(a);
        out.push([
            (a[0] + b[0]) / 2.0 + delta * normal[0],
            (a[1] + b[1]) / 2.0 + delta * normal[1],
        ]);
    }
    Polygon::new(out)
}
