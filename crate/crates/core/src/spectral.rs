//! Frequency grids, Gaussian spectral filtering, and the synthesis transform
//! from a half-spectrum to a real raster together with its exact adjoint.
//!
//! Conventions:
//! - coefficients are Fourier-series coefficients of the unit-periodic
//!   signal, `F(m) = integral f(x) exp(-2 pi i m.x) dx`;
//! - the raster samples the synthesized signal at cell corners `idx / R`
//!   with no `1/N` factor, so pixel values carry density units;
//! - only the half-spectrum with a non-negative last mode component is
//!   stored; each stored mode carries a fold weight `w(m)` counting how many
//!   full-spectrum residues it stands for (see [`SpectralGrid::fold_weight`]).
//!
//! Fields and rasters are paired with
//! `<G, F> = sum_m w(m) Re[conj(G(m)) F(m)]` and the plain sum over pixels.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-spectrum mode layout for a `dim`-dimensional grid of `resolution`
/// cells per axis.
///
/// Modes are ordered row-major with the last axis fastest. Leading axes use
/// FFT order (`0, 1, .., R/2, -(R-1)/2, .., -1`), the last axis runs
/// `0..=R/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralGrid {
    dim: usize,
    resolution: usize,
}

impl SpectralGrid {
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "resolution must be at least 2, got {resolution}"
            )));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension {dim} is not supported")));
        }
        Ok(Self { dim, resolution })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Length of the stored last axis, `R/2 + 1`.
    pub fn half_len(&self) -> usize {
        self.resolution / 2 + 1
    }

    pub fn n_modes(&self) -> usize {
        self.resolution.pow(self.dim as u32 - 1) * self.half_len()
    }

    /// Number of raster cells, `R^d`.
    pub fn n_cells(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    fn signed(&self, idx: usize) -> i64 {
        if idx <= self.resolution / 2 {
            idx as i64
        } else {
            idx as i64 - self.resolution as i64
        }
    }

    /// Integer mode vector of stored mode `i`.
    pub fn mode(&self, i: usize) -> [i64; 3] {
        let mut out = [0i64; 3];
        let half = self.half_len();
        out[self.dim - 1] = (i % half) as i64;
        let mut rest = i / half;
        for axis in (0..self.dim - 1).rev() {
            out[axis] = self.signed(rest % self.resolution);
            rest /= self.resolution;
        }
        out
    }

    /// Wavevector `k = 2 pi m` in radians per unit length.
    pub fn wavevector(&self, i: usize) -> [f64; 3] {
        let m = self.mode(i);
        [2.0 * PI * m[0] as f64, 2.0 * PI * m[1] as f64, 2.0 * PI * m[2] as f64]
    }

    /// Index of the mode's residue class in a full row-major `R^d` array.
    pub fn residue_index(&self, i: usize) -> usize {
        let m = self.mode(i);
        let r = self.resolution as i64;
        (0..self.dim).fold(0usize, |acc, a| acc * self.resolution + m[a].rem_euclid(r) as usize)
    }

    /// Hermitian fold weight: 1 when the negated mode (mod R) is itself
    /// stored, i.e. the last component is 0 or the Nyquist index; 2 when the
    /// conjugate partner is implied.
    pub fn fold_weight(&self, i: usize) -> f64 {
        let last = i % self.half_len();
        if last == 0 || (self.resolution.is_multiple_of(2) && last == self.resolution / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// True when the mode equals its own negation modulo R.
    pub fn is_self_conjugate(&self, i: usize) -> bool {
        let m = self.mode(i);
        let r = self.resolution as i64;
        (0..self.dim).all(|a| (2 * m[a]).rem_euclid(r) == 0)
    }

    /// Squared mode norm `|m|^2`.
    pub fn mode_norm_sq(&self, i: usize) -> f64 {
        let m = self.mode(i);
        (0..self.dim).map(|a| (m[a] * m[a]) as f64).sum()
    }

    fn check_same(&self, other: &SpectralGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{}D R={} vs {}D R={}",
                self.dim, self.resolution, other.dim, other.resolution
            )));
        }
        Ok(())
    }
}

/// Builds the half-spectrum grid for dimension `dim` and resolution `resolution`.
pub fn build_grid(dim: usize, resolution: usize) -> Result<SpectralGrid> {
    SpectralGrid::new(dim, resolution)
}

/// Complex coefficients on a [`SpectralGrid`], `n_modes x channels`, channel fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: SpectralGrid,
    pub channels: usize,
    pub coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: SpectralGrid, channels: usize) -> Self {
        Self {
            grid,
            channels,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.n_modes() * channels],
        }
    }

    pub fn coeff(&self, mode: usize, channel: usize) -> Complex64 {
        self.coeffs[mode * self.channels + channel]
    }

    pub fn dc(&self, channel: usize) -> Complex64 {
        self.coeff(0, channel)
    }

    /// `sum_m w(m) Re[conj(self(m)) other(m)]` over all channels.
    pub fn pair(&self, other: &SpectralField) -> Result<f64> {
        self.check_compatible(other)?;
        let c = self.channels;
        Ok(self
            .coeffs
            .chunks(c)
            .zip(other.coeffs.chunks(c))
            .enumerate()
            .map(|(i, (g, f))| {
                let w = self.grid.fold_weight(i);
                w * g.iter().zip(f).map(|(g, f)| (g.conj() * f).re).sum::<f64>()
            })
            .sum())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * alpha).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    pub(crate) fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.channels != other.channels {
            return Err(Error::GridMismatch(format!(
                "{} vs {} channels",
                self.channels, other.channels
            )));
        }
        Ok(())
    }
}

/// Isotropic Gaussian low-pass filter, `H(m) = exp(-2 pi^2 g^2 |m|^2 / R^2)`,
/// i.e. a spatial Gaussian of standard deviation `g` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFilter {
    width_cells: f64,
}

impl GaussianFilter {
    pub const DEFAULT_WIDTH: f64 = 2.0;

    pub fn new(width_cells: f64) -> Result<Self> {
        if !(width_cells > 0.0 && width_cells.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "filter width must be positive, got {width_cells}"
            )));
        }
        Ok(Self { width_cells })
    }

    pub fn width_cells(&self) -> f64 {
        self.width_cells
    }

    pub fn gain(&self, grid: &SpectralGrid, mode: usize) -> f64 {
        let r = grid.resolution() as f64;
        (-2.0 * PI * PI * self.width_cells * self.width_cells * grid.mode_norm_sq(mode) / (r * r)).exp()
    }

    pub fn gains(&self, grid: &SpectralGrid) -> Vec<f64> {
        (0..grid.n_modes()).map(|i| self.gain(grid, i)).collect()
    }
}

impl Default for GaussianFilter {
    fn default() -> Self {
        Self {
            width_cells: Self::DEFAULT_WIDTH,
        }
    }
}

/// Element-wise product of a field with the filter gains.
pub fn apply_filter(field: &SpectralField, filter: &GaussianFilter) -> SpectralField {
    let gains = filter.gains(&field.grid);
    let c = field.channels;
    let coeffs = field.coeffs.iter().enumerate().map(|(i, v)| v * gains[i / c]).collect();
    SpectralField {
        coeffs,
        ..field.clone()
    }
}

/// Real `d`-dimensional raster, cells row-major (last axis fastest) with
/// channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub dim: usize,
    pub resolution: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn zeros(dim: usize, resolution: usize, channels: usize) -> Self {
        Self {
            dim,
            resolution,
            channels,
            values: vec![0.0; resolution.pow(dim as u32) * channels],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    /// Flat cell index of a multi-index.
    pub fn cell_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.resolution + i)
    }

    pub fn get(&self, idx: &[usize], channel: usize) -> f64 {
        self.values[self.cell_index(idx) * self.channels + channel]
    }

    /// Value at the cell corner closest to a point in the unit box.
    pub fn sample_nearest(&self, x: &[f64], channel: usize) -> f64 {
        let r = self.resolution;
        let idx: Vec<usize> = x
            .iter()
            .map(|&c| ((c * r as f64).round() as i64).rem_euclid(r as i64) as usize)
            .collect();
        self.get(&idx, channel)
    }

    pub fn mean(&self, channel: usize) -> f64 {
        let n = self.n_cells();
        self.values.iter().skip(channel).step_by(self.channels).sum::<f64>() / n as f64
    }

    pub fn inner(&self, other: &Raster) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.dim == other.dim && self.resolution == other.resolution && self.channels == other.channels
    }

    /// Writes little-endian `f32` values plus a `<path>.json` sidecar.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let meta = RasterMeta {
            dim: self.dim,
            resolution: self.resolution,
            channels: self.channels,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string(&meta)?)?;
        Ok(())
    }

    /// Reads a raster written by [`Raster::write_binary`].
    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: RasterMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let bytes = std::fs::read(path)?;
        let expected = meta.resolution.pow(meta.dim as u32) * meta.channels * 4;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "raster file has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self {
            dim: meta.dim,
            resolution: meta.resolution,
            channels: meta.channels,
            values,
        })
    }

    /// 8-bit binary PGM of a 2D single-channel raster; values clamped to [0, 1].
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.dim != 2 || self.channels != 1 {
            return Err(Error::InvalidArgument(
                "PGM export needs a 2D single-channel raster".into(),
            ));
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.resolution, self.resolution)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RasterMeta {
    dim: usize,
    resolution: usize,
    channels: usize,
}

/// Sidecar metadata path, `<path>.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// In-place unnormalized multi-dimensional FFT of a row-major `R^d` array.
fn fft_nd(data: &mut [Complex64], dim: usize, r: usize, direction: FftDirection) {
    let fft = FftPlanner::new().plan_fft(r, direction);
    let mut line = vec![Complex64::new(0.0, 0.0); r];
    for axis in 0..dim {
        let stride = r.pow((dim - 1 - axis) as u32);
        let outer = data.len() / (r * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * r * stride + s;
                for (t, l) in line.iter_mut().enumerate() {
                    *l = data[base + t * stride];
                }
                fft.process(&mut line);
                for (t, l) in line.iter().enumerate() {
                    data[base + t * stride] = *l;
                }
            }
        }
    }
}

/// Synthesizes the raster `sum_m w(m) Re[F(m) exp(2 pi i m.idx / R)]`.
pub fn inverse_transform(field: &SpectralField) -> Raster {
    let grid = field.grid;
    let c = field.channels;
    let n_cells = grid.n_cells();
    let planes: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut full = vec![Complex64::new(0.0, 0.0); n_cells];
            for i in 0..grid.n_modes() {
                full[grid.residue_index(i)] += field.coeff(i, ch) * grid.fold_weight(i);
            }
            fft_nd(&mut full, grid.dim(), grid.resolution(), FftDirection::Inverse);
            full.into_iter().map(|z| z.re).collect()
        })
        .collect();
    interleave(grid, c, planes)
}

/// Exact adjoint of [`inverse_transform`] under the weighted spectral pairing:
/// `adjoint(g)(m) = sum_idx g(idx) exp(-2 pi i m.idx / R)`.
pub fn adjoint_transform(raster: &Raster) -> Result<SpectralField> {
    let grid = SpectralGrid::new(raster.dim, raster.resolution)?;
    let c = raster.channels;
    let n_cells = grid.n_cells();
    let planes: Vec<Vec<Complex64>> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut full: Vec<Complex64> = (0..n_cells)
                .map(|p| Complex64::new(raster.values[p * c + ch], 0.0))
                .collect();
            fft_nd(&mut full, grid.dim(), grid.resolution(), FftDirection::Forward);
            (0..grid.n_modes()).map(|i| full[grid.residue_index(i)]).collect()
        })
        .collect();
    let mut out = SpectralField::zeros(grid, c);
    for (ch, plane) in planes.iter().enumerate() {
        for (i, v) in plane.iter().enumerate() {
            out.coeffs[i * c + ch] = *v;
        }
    }
    Ok(out)
}

fn interleave(grid: SpectralGrid, channels: usize, planes: Vec<Vec<f64>>) -> Raster {
    let mut raster = Raster::zeros(grid.dim(), grid.resolution(), channels);
    for (ch, plane) in planes.into_iter().enumerate() {
        for (p, v) in plane.into_iter().enumerate() {
            raster.values[p * channels + ch] = v;
        }
    }
    raster
}

fn cell_coords(grid: &SpectralGrid, p: usize) -> [f64; 3] {
    let r = grid.resolution();
    let mut out = [0.0; 3];
    let mut rest = p;
    for axis in (0..grid.dim()).rev() {
        out[axis] = (rest % r) as f64;
        rest /= r;
    }
    out
}

fn phase(grid: &SpectralGrid, mode: usize, cell: usize) -> f64 {
    let m = grid.mode(mode);
    let x = cell_coords(grid, cell);
    let r = grid.resolution() as f64;
    2.0 * PI * (0..grid.dim()).map(|a| m[a] as f64 * x[a]).sum::<f64>() / r
}

/// Direct-summation reference for [`inverse_transform`], `O(modes * cells)`.
pub fn inverse_transform_direct(field: &SpectralField) -> Raster {
    let grid = field.grid;
    let c = field.channels;
    let mut raster = Raster::zeros(grid.dim(), grid.resolution(), c);
    for p in 0..grid.n_cells() {
        for i in 0..grid.n_modes() {
            let e = Complex64::from_polar(1.0, phase(&grid, i, p));
            let w = grid.fold_weight(i);
            for ch in 0..c {
                raster.values[p * c + ch] += w * (field.coeff(i, ch) * e).re;
            }
        }
    }
    raster
}

/// Direct-summation reference for [`adjoint_transform`].
pub fn adjoint_transform_direct(raster: &Raster) -> Result<SpectralField> {
    let grid = SpectralGrid::new(raster.dim, raster.resolution)?;
    let c = raster.channels;
    let mut out = SpectralField::zeros(grid, c);
    for i in 0..grid.n_modes() {
        for p in 0..grid.n_cells() {
            let e = Complex64::from_polar(1.0, -phase(&grid, i, p));
            for ch in 0..c {
                out.coeffs[i * c + ch] += e * raster.values[p * c + ch];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: SpectralGrid, c: usize, rng: &mut ChaCha8Rng) -> SpectralField {
        let mut f = SpectralField::zeros(grid, c);
        for v in &mut f.coeffs {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        f
    }

    fn random_raster(dim: usize, r: usize, c: usize, rng: &mut ChaCha8Rng) -> Raster {
        let mut g = Raster::zeros(dim, r, c);
        for v in &mut g.values {
            *v = rng.gen_range(-1.0..1.0);
        }
        g
    }

    #[test]
    fn mode_counts() {
        assert_eq!(build_grid(2, 4).unwrap().n_modes(), 12);
        assert_eq!(build_grid(3, 4).unwrap().n_modes(), 48);
        assert_eq!(build_grid(2, 5).unwrap().n_modes(), 15);
        assert!(build_grid(2, 1).is_err());
    }

    #[test]
    fn dc_mode_present_once() {
        for (d, r) in [(2, 4), (3, 5), (2, 8)] {
            let g = build_grid(d, r).unwrap();
            let zeros = (0..g.n_modes()).filter(|&i| g.mode(i) == [0, 0, 0]).count();
            assert_eq!(zeros, 1);
            assert_eq!(g.mode(0), [0, 0, 0]);
        }
    }

    #[test]
    fn modes_cover_distinct_residues() {
        let g = build_grid(3, 6).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..g.n_modes() {
            assert!(seen.insert(g.residue_index(i)));
            let m = g.mode(i);
            assert!((0..=3).contains(&m[2]));
            assert!((-2..=3).contains(&m[0]));
        }
    }

    #[test]
    fn fold_weights_count_full_spectrum() {
        for (d, r) in [(2, 4), (2, 5), (3, 6), (3, 7)] {
            let g = build_grid(d, r).unwrap();
            let total: f64 = (0..g.n_modes()).map(|i| g.fold_weight(i)).sum();
            assert_eq!(total as usize, g.n_cells());
        }
    }

    #[test]
    fn filter_dc_unity_and_monotone() {
        let g = build_grid(2, 16).unwrap();
        let f = GaussianFilter::new(1.0).unwrap();
        assert_eq!(f.gain(&g, 0), 1.0);
        let mut pairs: Vec<(f64, f64)> = (0..g.n_modes()).map(|i| (g.mode_norm_sq(i), f.gain(&g, i))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[1].1 <= w[0].1 && w[1].1 > 0.0);
        }
        assert!(GaussianFilter::new(0.0).is_err());
    }

    #[test]
    fn nyquist_gain() {
        let g = build_grid(2, 16).unwrap();
        let f = GaussianFilter::new(1.0).unwrap();
        let nyq = (0..g.n_modes()).find(|&i| g.mode(i) == [0, 8, 0]).unwrap();
        let expect = (-PI * PI / 2.0).exp();
        assert!((f.gain(&g, nyq) - expect).abs() < 1e-15);
        assert!((expect - 0.00719).abs() < 1e-5);
    }

    #[test]
    fn tiny_width_is_identity() {
        let g = build_grid(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let field = random_field(g, 1, &mut rng);
        let out = apply_filter(&field, &GaussianFilter::new(1e-12).unwrap());
        for (a, b) in out.coeffs.iter().zip(&field.coeffs) {
            assert!((a - b).norm() < 1e-20);
        }
        let out = apply_filter(&field, &GaussianFilter::default());
        assert_eq!(out.coeffs[0], field.coeffs[0]);
    }

    #[test]
    fn pure_dc_gives_constant_raster() {
        let g = build_grid(2, 8).unwrap();
        let mut f = SpectralField::zeros(g, 1);
        f.coeffs[0] = Complex64::new(0.5, 0.0);
        let r = inverse_transform(&f);
        assert!(r.values.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn fft_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (d, r, c) in [(2, 8, 1), (2, 5, 2), (3, 4, 1), (3, 6, 1)] {
            let g = build_grid(d, r).unwrap();
            let field = random_field(g, c, &mut rng);
            let fast = inverse_transform(&field);
            let slow = inverse_transform_direct(&field);
            let scale = slow.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in fast.values.iter().zip(&slow.values) {
                assert!((a - b).abs() <= 1e-10 * scale, "{d} {r}: {a} vs {b}");
            }
            let raster = random_raster(d, r, c, &mut rng);
            let fast = adjoint_transform(&raster).unwrap();
            let slow = adjoint_transform_direct(&raster).unwrap();
            for (a, b) in fast.coeffs.iter().zip(&slow.coeffs) {
                assert!((a - b).norm() <= 1e-10 * (1.0 + b.norm()));
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for r in [4, 8, 16, 32] {
            let g = build_grid(2, r).unwrap();
            for _ in 0..5 {
                let f = random_field(g, 1, &mut rng);
                let raster = random_raster(2, r, 1, &mut rng);
                let lhs = inverse_transform(&f).inner(&raster);
                let rhs = adjoint_transform(&raster).unwrap().pair(&f).unwrap();
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "R={r}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn delta_cotangent_gives_unit_coefficients() {
        let mut g = Raster::zeros(2, 8, 1);
        g.values[0] = 1.0;
        let a = adjoint_transform(&g).unwrap();
        assert!(a.coeffs.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let zero = adjoint_transform(&Raster::zeros(2, 8, 1)).unwrap();
        assert!(zero.coeffs.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn linearity_of_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = build_grid(3, 4).unwrap();
        let f1 = random_field(g, 1, &mut rng);
        let f2 = random_field(g, 1, &mut rng);
        let combo = f1.scale(2.5).add(&f2.scale(-0.75)).unwrap();
        let lhs = inverse_transform(&combo);
        let r1 = inverse_transform(&f1);
        let r2 = inverse_transform(&f2);
        for i in 0..lhs.values.len() {
            let rhs = 2.5 * r1.values[i] - 0.75 * r2.values[i];
            assert!((lhs.values[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_on_hermitian_field() {
        // a field produced from a real raster is Hermitian-consistent, so the
        // mean-square of its synthesis equals the folded coefficient energy
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = 8;
        let raster = random_raster(2, r, 1, &mut rng);
        let n = (r * r) as f64;
        let field = adjoint_transform(&raster).unwrap().scale(1.0 / n);
        let filtered = apply_filter(&field, &GaussianFilter::new(0.7).unwrap());
        let out = inverse_transform(&filtered);
        let energy = out.values.iter().map(|v| v * v).sum::<f64>() / n;
        let spectral: f64 = (0..filtered.grid.n_modes())
            .map(|i| filtered.grid.fold_weight(i) * filtered.coeffs[i].norm_sqr())
            .sum();
        assert!((energy - spectral).abs() <= 1e-9 * spectral, "{energy} vs {spectral}");
    }

    #[test]
    fn binary_and_pgm_roundtrip() {
        let dir = std::env::temp_dir().join(format!("ddsl-raster-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut r = Raster::zeros(2, 4, 1);
        r.values[5] = 0.25;
        r.values[6] = 1.5;
        let path = dir.join("r.bin");
        r.write_binary(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 64);
        let back = Raster::read_binary(&path).unwrap();
        assert_eq!(back, r);
        let pgm = dir.join("r.pgm");
        r.write_pgm(&pgm).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
        let body = &bytes[bytes.len() - 16..];
        assert_eq!(body[5], 64);
        assert_eq!(body[6], 255);
        std::fs::remove_dir_all(&dir).ok();
    }
}
