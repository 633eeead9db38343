//! Differentiable rasterization of simplex meshes through their exact
//! Fourier coefficients.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod deform;
pub mod divided;
pub mod error;
pub mod geometry;
pub mod gradients;
pub mod harness;
pub mod mesh;
pub mod nuft;
pub mod optimizer;
pub mod pipeline;
pub mod spectral;

pub use error::{Error, Result};
pub use gradients::{backward_auxnode, backward_mesh, MeshGradient};
pub use mesh::{SimplexMesh, Violation};
pub use nuft::{forward_auxnode, forward_mesh};
pub use pipeline::{rasterize, rasterize_backward, Mode, Polygon, RasterizeConfig};
pub use spectral::{build_grid, GaussianFilter, Raster, SpectralField, SpectralGrid};
