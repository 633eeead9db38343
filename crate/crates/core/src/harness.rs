//! Random meshes, gradient checks and the analytic-versus-numeric timing
//! benchmark.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::distortion_factor;
use crate::gradients::{backward_mesh, numeric_backward, MeshGradient};
use crate::mesh::SimplexMesh;
use crate::spectral::{
    adjoint_transform, apply_filter, build_grid, GaussianFilter, Raster, SpectralField, SpectralGrid,
};

/// Elements whose distortion factor falls below this are redrawn.
pub const MIN_RANDOM_DISTORTION: f64 = 1e-2;

const MAX_DRAWS: usize = 1_000;

const MAX_RESTARTS: usize = 100;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n_points` vertices uniform in `[0.1, 0.9]^d` and `n_points` elements of
/// degree `j` drawn by independent index draws (one element per point when
/// `j = 0`), with densities uniform in `[0.5, 1.5]`.
pub fn random_mesh(j: usize, d: usize, n_points: usize, rng: &mut impl Rng) -> Result<SimplexMesh> {
    if j > d || !(1..=3).contains(&d) {
        return Err(Error::InvalidArgument(format!(
            "unsupported degree {j} in dimension {d}"
        )));
    }
    if n_points < j + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n_points} points cannot form a {j}-simplex"
        )));
    }
    // a vertex set too flat to host well-shaped simplices is redrawn whole
    for _ in 0..MAX_RESTARTS {
        let vertices: Vec<f64> = (0..n_points * d).map(|_| rng.gen_range(0.1..0.9)).collect();
        if let Some(elements) = draw_elements(j, d, n_points, &vertices, rng)? {
            let n_elements = elements.len() / (j + 1);
            let densities = (0..n_elements).map(|_| rng.gen_range(0.5..1.5)).collect();
            return SimplexMesh::new(d, j, 1, vertices, elements, densities);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not draw well-shaped {j}-simplices on {n_points} points"
    )))
}

fn draw_elements(
    j: usize,
    d: usize,
    n_points: usize,
    vertices: &[f64],
    rng: &mut impl Rng,
) -> Result<Option<Vec<usize>>> {
    if j == 0 {
        return Ok(Some((0..n_points).collect()));
    }
    let mut elements = Vec::with_capacity(n_points * (j + 1));
    let mut pts = vec![0.0; (j + 1) * d];
    for _ in 0..n_points {
        let mut accepted = false;
        for _ in 0..MAX_DRAWS {
            let idx: Vec<usize> = (0..=j).map(|_| rng.gen_range(0..n_points)).collect();
            if (1..idx.len()).any(|a| idx[..a].contains(&idx[a])) {
                continue;
            }
            for (slot, &v) in idx.iter().enumerate() {
                pts[slot * d..(slot + 1) * d].copy_from_slice(&vertices[v * d..(v + 1) * d]);
            }
            if distortion_factor(&pts, d)? >= MIN_RANDOM_DISTORTION {
                elements.extend(idx);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Ok(None);
        }
    }
    Ok(Some(elements))
}

/// Random raster cotangent pulled into spectral space through the filter,
/// the same path a per-pixel loss gradient takes.
pub fn random_cotangent(
    grid: &SpectralGrid,
    channels: usize,
    filter: &GaussianFilter,
    rng: &mut impl Rng,
) -> Result<SpectralField> {
    let mut raster = Raster::zeros(grid.dim(), grid.resolution(), channels);
    raster.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    Ok(apply_filter(&adjoint_transform(&raster)?, filter))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub degree: usize,
    pub dim: usize,
    pub n_points: usize,
    pub resolution: usize,
    pub seed: u64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub analytic: MeshGradient,
    pub numeric: MeshGradient,
}

/// Compares the analytic backward pass with central differences on a seeded
/// random mesh and cotangent.
pub fn gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = seeded_rng(config.seed);
    let mesh = random_mesh(config.degree, config.dim, config.n_points, &mut rng)?;
    let grid = build_grid(config.dim, config.resolution)?;
    let cot = random_cotangent(&grid, 1, &GaussianFilter::default(), &mut rng)?;
    let analytic = backward_mesh(&mesh, &grid, &cot, true)?;
    let numeric = numeric_backward(&mesh, &grid, &cot, config.step)?;
    Ok(GradcheckReport {
        max_relative_error: analytic.max_relative_error(&numeric),
        analytic,
        numeric,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub j: usize,
    pub d: usize,
    pub n_points: usize,
    pub resolution: usize,
    pub repetitions: usize,
    pub analytic_ms_mean: f64,
    pub analytic_ms_std: f64,
    pub numeric_ms_mean: f64,
    pub numeric_ms_std: f64,
    pub speedup: f64,
}

pub const BENCH_HEADER: &str =
    "j,d,n_points,resolution,repetitions,analytic_ms_mean,analytic_ms_std,numeric_ms_mean,numeric_ms_std,speedup";

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn time_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<f64> {
    let start = Instant::now();
    std::hint::black_box(f()?);
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Times the analytic and the finite-difference backward pass on one random
/// configuration. One untimed warm-up call of each precedes the measurements;
/// mesh generation is not timed.
pub fn bench_one(
    j: usize,
    d: usize,
    n_points: usize,
    resolution: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchRecord> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let mesh = random_mesh(j, d, n_points, &mut rng)?;
    let grid = build_grid(d, resolution)?;
    let cot = random_cotangent(&grid, 1, &GaussianFilter::default(), &mut rng)?;
    let analytic = || backward_mesh(&mesh, &grid, &cot, false);
    let numeric = || numeric_backward(&mesh, &grid, &cot, 1e-6);
    analytic()?;
    numeric()?;
    let mut ta = Vec::with_capacity(repetitions);
    let mut tn = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        ta.push(time_ms(analytic)?);
        tn.push(time_ms(numeric)?);
    }
    let (analytic_ms_mean, analytic_ms_std) = mean_std(&ta);
    let (numeric_ms_mean, numeric_ms_std) = mean_std(&tn);
    Ok(BenchRecord {
        j,
        d,
        n_points,
        resolution,
        repetitions,
        analytic_ms_mean,
        analytic_ms_std,
        numeric_ms_mean,
        numeric_ms_std,
        speedup: numeric_ms_mean / analytic_ms_mean,
    })
}

pub fn write_bench_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(BENCH_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}
