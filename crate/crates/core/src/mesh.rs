//! Homogeneous simplex meshes: vertex coordinates, element connectivity and
//! per-element densities, plus validation and the JSON interchange format.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, DEGENERACY_EPS};

/// A mesh of `degree`-simplices embedded in `dim` dimensions.
///
/// Storage is flat and row-major: vertex `v` occupies
/// `vertices[v * dim..(v + 1) * dim]`, element `e` occupies
/// `elements[e * (degree + 1)..]` and its densities
/// `densities[e * channels..(e + 1) * channels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeshJson", into = "MeshJson")]
pub struct SimplexMesh {
    dim: usize,
    degree: usize,
    channels: usize,
    vertices: Vec<f64>,
    elements: Vec<usize>,
    densities: Vec<f64>,
}

impl SimplexMesh {
    /// Builds a mesh, checking only that the flat arrays have consistent
    /// shapes. Semantic checks live in [`SimplexMesh::validate`].
    pub fn new(
        dim: usize,
        degree: usize,
        channels: usize,
        vertices: Vec<f64>,
        elements: Vec<usize>,
        densities: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("dimension must be at least 1".into()));
        }
        if channels == 0 {
            return Err(Error::DimensionMismatch(
                "at least one density channel is required".into(),
            ));
        }
        if !vertices.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates is not a multiple of dimension {dim}",
                vertices.len()
            )));
        }
        let arity = degree + 1;
        if !elements.len().is_multiple_of(arity) {
            return Err(Error::DimensionMismatch(format!(
                "{} indices is not a multiple of element arity {arity}",
                elements.len()
            )));
        }
        let n_elements = elements.len() / arity;
        if densities.len() != n_elements * channels {
            return Err(Error::DimensionMismatch(format!(
                "expected {} densities for {n_elements} elements x {channels} channels, got {}",
                n_elements * channels,
                densities.len()
            )));
        }
        Ok(Self {
            dim,
            degree,
            channels,
            vertices,
            elements,
            densities,
        })
    }

    /// Single-channel mesh with unit density on every element.
    pub fn with_unit_density(dim: usize, degree: usize, vertices: Vec<f64>, elements: Vec<usize>) -> Result<Self> {
        let n = elements.len() / (degree + 1);
        Self::new(dim, degree, 1, vertices, elements, vec![1.0; n])
    }

    pub fn empty(dim: usize, degree: usize) -> Self {
        Self {
            dim,
            degree,
            channels: 1,
            vertices: Vec::new(),
            elements: Vec::new(),
            densities: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn arity(&self) -> usize {
        self.degree + 1
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len() / self.dim
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / self.arity()
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn vertices_mut(&mut self) -> &mut [f64] {
        &mut self.vertices
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v * self.dim..(v + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let a = self.arity();
        &self.elements[e * a..(e + 1) * a]
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn densities_mut(&mut self) -> &mut [f64] {
        &mut self.densities
    }

    pub fn density(&self, e: usize) -> &[f64] {
        &self.densities[e * self.channels..(e + 1) * self.channels]
    }

    /// Replaces the vertex coordinates, keeping connectivity and densities.
    pub fn with_vertices(&self, vertices: Vec<f64>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coordinates, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    /// Coordinates of the nodes of element `e`, flat `(degree + 1) * dim`.
    pub fn element_points(&self, e: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arity() * self.dim);
        for &v in self.element(e) {
            out.extend_from_slice(self.vertex(v));
        }
        out
    }

    /// Sum over elements of density times content, one entry per channel.
    pub fn total_mass(&self) -> Result<Vec<f64>> {
        let mut mass = vec![0.0; self.channels];
        for e in 0..self.n_elements() {
            let c = geometry::content(&self.element_points(e), self.dim)?;
            for (m, rho) in mass.iter_mut().zip(self.density(e)) {
                *m += rho * c;
            }
        }
        Ok(mass)
    }

    /// Checks every mesh invariant and returns the list of problems found.
    /// Coordinates outside the unit box are reported as warnings.
    pub fn validate(&self, strict: bool) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.degree > self.dim {
            out.push(Violation::DegreeExceedsDimension {
                degree: self.degree,
                dim: self.dim,
            });
        }
        let n_v = self.n_vertices();
        for v in 0..n_v {
            let x = self.vertex(v);
            if x.iter().any(|c| !c.is_finite()) {
                out.push(Violation::NonFiniteVertex(v));
            } else if x.iter().any(|&c| !(0.0..1.0).contains(&c)) {
                out.push(Violation::OutsideUnitBox(v));
            }
        }
        for (e, rho) in self.densities.chunks(self.channels).enumerate() {
            if rho.iter().any(|r| !r.is_finite()) {
                out.push(Violation::NonFiniteDensity(e));
            }
        }
        for e in 0..self.n_elements() {
            let nodes = self.element(e);
            let mut structural = false;
            for &v in nodes {
                if v >= n_v {
                    out.push(Violation::IndexOutOfRange {
                        element: e,
                        index: v,
                        n_vertices: n_v,
                    });
                    structural = true;
                }
            }
            for (a, &v) in nodes.iter().enumerate() {
                if nodes[a + 1..].contains(&v) {
                    out.push(Violation::RepeatedVertex { element: e, index: v });
                    structural = true;
                    break;
                }
            }
            if strict && !structural && self.degree >= 1 && self.degree <= self.dim {
                let points = self.element_points(e);
                if points.iter().all(|c| c.is_finite()) {
                    let c = geometry::content(&points, self.dim).unwrap_or(0.0);
                    if c <= DEGENERACY_EPS {
                        out.push(Violation::Degenerate { element: e, content: c });
                    }
                }
            }
        }
        out
    }

    /// Errors with every non-warning violation; warnings are ignored.
    pub fn ensure_valid(&self, strict: bool) -> Result<()> {
        let errors: Vec<_> = self.validate(strict).into_iter().filter(|v| !v.is_warning()).collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: MeshJson = serde_json::from_str(s)?;
        raw.try_into()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MeshJson::from(self))?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// One failed mesh invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DegreeExceedsDimension {
        degree: usize,
        dim: usize,
    },
    NonFiniteVertex(usize),
    OutsideUnitBox(usize),
    NonFiniteDensity(usize),
    IndexOutOfRange {
        element: usize,
        index: usize,
        n_vertices: usize,
    },
    RepeatedVertex {
        element: usize,
        index: usize,
    },
    Degenerate {
        element: usize,
        content: f64,
    },
}

impl Violation {
    /// Out-of-box coordinates are legal (the domain is periodic) but flagged.
    pub fn is_warning(&self) -> bool {
        matches!(self, Violation::OutsideUnitBox(_))
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DegreeExceedsDimension { degree, dim } => {
                write!(f, "simplex degree {degree} exceeds dimension {dim}")
            }
            Violation::NonFiniteVertex(v) => write!(f, "vertex {v} has a non-finite coordinate"),
            Violation::OutsideUnitBox(v) => write!(f, "vertex {v} lies outside [0,1)^d and will alias periodically"),
            Violation::NonFiniteDensity(e) => write!(f, "element {e} has a non-finite density"),
            Violation::IndexOutOfRange {
                element,
                index,
                n_vertices,
            } => {
                write!(
                    f,
                    "element {element} references vertex {index} but only {n_vertices} exist"
                )
            }
            Violation::RepeatedVertex { element, index } => {
                write!(f, "element {element} repeats vertex {index}")
            }
            Violation::Degenerate { element, content } => {
                write!(f, "element {element} is degenerate (content {content:e})")
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum DensitiesJson {
    Scalar(Vec<f64>),
    Channels(Vec<Vec<f64>>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshJson {
    dim: usize,
    degree: usize,
    vertices: Vec<Vec<f64>>,
    elements: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    densities: Option<DensitiesJson>,
}

impl TryFrom<MeshJson> for SimplexMesh {
    type Error = Error;

    fn try_from(raw: MeshJson) -> Result<Self> {
        let dim = raw.dim;
        let arity = raw.degree + 1;
        if let Some(v) = raw.vertices.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "vertex with {} coordinates in dimension {dim}",
                v.len()
            )));
        }
        if let Some(e) = raw.elements.iter().find(|e| e.len() != arity) {
            return Err(Error::DimensionMismatch(format!(
                "element with {} indices for degree {}",
                e.len(),
                raw.degree
            )));
        }
        let n_e = raw.elements.len();
        let (channels, densities) = match raw.densities {
            None => (1, vec![1.0; n_e]),
            Some(DensitiesJson::Scalar(d)) => (1, d),
            Some(DensitiesJson::Channels(rows)) => {
                let c = rows.first().map_or(1, Vec::len);
                if rows.iter().any(|r| r.len() != c) {
                    return Err(Error::DimensionMismatch(
                        "density rows have differing channel counts".into(),
                    ));
                }
                (c, rows.into_iter().flatten().collect())
            }
        };
        SimplexMesh::new(
            dim,
            raw.degree,
            channels,
            raw.vertices.into_iter().flatten().collect(),
            raw.elements.into_iter().flatten().collect(),
            densities,
        )
    }
}

impl From<SimplexMesh> for MeshJson {
    fn from(mesh: SimplexMesh) -> Self {
        (&mesh).into()
    }
}

impl From<&SimplexMesh> for MeshJson {
    fn from(m: &SimplexMesh) -> Self {
        let densities = if m.channels == 1 {
            DensitiesJson::Scalar(m.densities.clone())
        } else {
            DensitiesJson::Channels(m.densities.chunks(m.channels).map(<[f64]>::to_vec).collect())
        };
        MeshJson {
            dim: m.dim,
            degree: m.degree,
            vertices: m.vertices.chunks(m.dim).map(<[f64]>::to_vec).collect(),
            elements: m.elements.chunks(m.arity()).map(<[usize]>::to_vec).collect(),
            densities: Some(densities),
        }
    }
}
