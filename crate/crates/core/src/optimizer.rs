//! Gradient-descent shape and pose fitting against raster targets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deform::{ControlRig, PoseQuat, RigSpec};
use crate::error::{Error, Result};
use crate::mesh::SimplexMesh;
use crate::pipeline::{loss_smooth, rasterize, rasterize_backward, Mode, Polygon, RasterizeConfig};
use crate::spectral::{GaussianFilter, Raster};

/// Losses without improvement for this many iterations end a fit.
pub const CONVERGENCE_WINDOW: usize = 10;

/// Step halvings tried before a backtracking step is abandoned.
pub const MAX_HALVINGS: usize = 20;

pub const TRAJECTORY_HEADER: &str = "iteration,loss,grad_norm";

/// A mesh given inline or as a path to a mesh JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    Path(PathBuf),
    Inline(SimplexMesh),
}

impl MeshSource {
    pub fn load(&self) -> Result<SimplexMesh> {
        match self {
            MeshSource::Path(p) => SimplexMesh::read_json(p),
            MeshSource::Inline(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum TargetSpec {
    Mesh(MeshSource),
    /// Raster binary with its JSON sidecar.
    Raster(PathBuf),
}

/// What the optimizer moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Variable {
    Vertices,
    Rig(RigSpec),
    Pose(#[serde(default)] PoseQuat),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Sum of absolute pixel differences.
    L1,
    /// Sum of squared pixel differences.
    L2,
    /// L1 summed over several resolutions, plus `lambda` times the polygon
    /// smoothness loss.
    MresSmooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub lambda: f64,
    /// Resolutions of the multi-resolution loss; defaults to the raster resolution.
    #[serde(default)]
    pub resolutions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSpec {
    pub resolution: usize,
    #[serde(default = "default_filter")]
    pub filter: f64,
    #[serde(default)]
    pub mode: Mode,
}

fn default_filter() -> f64 {
    GaussianFilter::DEFAULT_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub step: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_true")]
    pub backtracking: bool,
}

fn default_max_iters() -> usize {
    500
}

fn default_tol() -> f64 {
    1e-9
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitProblem {
    pub variable: Variable,
    pub mesh: MeshSource,
    pub target: TargetSpec,
    pub raster: RasterSpec,
    pub loss: LossSpec,
    pub schedule: Schedule,
    /// Write a mesh snapshot every this many iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

impl FitProblem {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads a problem file. Relative mesh and raster paths inside it are
    /// taken relative to the file's directory.
    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut problem = Self::from_json_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let MeshSource::Path(p) = &mut problem.mesh {
            rebase(p);
        }
        match &mut problem.target {
            TargetSpec::Mesh(MeshSource::Path(p)) | TargetSpec::Raster(p) => rebase(p),
            TargetSpec::Mesh(MeshSource::Inline(_)) => {}
        }
        Ok(problem)
    }

    pub fn check(&self) -> Result<()> {
        let s = &self.schedule;
        if !(s.step > 0.0 && s.step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                s.step
            )));
        }
        if !(s.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be non-negative, got {}",
                s.tol
            )));
        }
        if !(self.loss.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be non-negative, got {}",
                self.loss.lambda
            )));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::InvalidArgument("snapshot_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Vertex order of a segment mesh forming one closed cycle, following the
/// element directions from element 0.
pub fn polygon_cycle(mesh: &SimplexMesh) -> Result<Vec<usize>> {
    if mesh.dim() != 2 || mesh.degree() != 1 {
        return Err(Error::InvalidPolygon("smoothness needs a 2D segment mesh".into()));
    }
    let n = mesh.n_vertices();
    if mesh.n_elements() != n || n < 3 {
        return Err(Error::InvalidPolygon(
            "segment mesh is not a single closed cycle".into(),
        ));
    }
    let mut next = vec![usize::MAX; n];
    for e in 0..n {
        let [a, b] = [mesh.element(e)[0], mesh.element(e)[1]];
        if next[a] != usize::MAX {
            return Err(Error::InvalidPolygon(format!("vertex {a} starts two segments")));
        }
        next[a] = b;
    }
    let start = mesh.element(0)[0];
    let mut order = vec![start];
    let mut v = next[start];
    while v != start {
        if v == usize::MAX || order.len() >= n {
            return Err(Error::InvalidPolygon(
                "segment mesh is not a single closed cycle".into(),
            ));
        }
        order.push(v);
        v = next[v];
    }
    if order.len() != n {
        return Err(Error::InvalidPolygon("segment mesh has more than one cycle".into()));
    }
    Ok(order)
}

enum Param {
    Vertices,
    Rig(ControlRig),
    Pose { pose: PoseQuat, rest: Vec<[f64; 3]> },
}

/// Loss and gradient of a [`FitProblem`] as a function of a flat parameter
/// vector.
pub struct Objective {
    rest: SimplexMesh,
    param: Param,
    loss: LossSpec,
    filter: GaussianFilter,
    mode: Mode,
    /// `(resolution, target raster)` per loss level.
    targets: Vec<(usize, Raster)>,
    cycle: Option<Vec<usize>>,
}

impl Objective {
    pub fn new(problem: &FitProblem) -> Result<Self> {
        problem.check()?;
        let rest = problem.mesh.load()?;
        rest.ensure_valid(false)?;
        let filter = GaussianFilter::new(problem.raster.filter)?;
        let mode = problem.raster.mode;
        let config =
            |r: usize| -> Result<RasterizeConfig> { RasterizeConfig::new(r, problem.raster.filter, mode) };
        let param = match &problem.variable {
            Variable::Vertices => Param::Vertices,
            Variable::Rig(spec) => {
                if rest.dim() != 2 {
                    return Err(Error::InvalidArgument("control rigs deform 2D meshes only".into()));
                }
                let verts = rest.vertices().chunks(2).map(|v| [v[0], v[1]]).collect();
                Param::Rig(spec.build(verts)?)
            }
            Variable::Pose(pose) => {
                if rest.dim() != 3 {
                    return Err(Error::InvalidArgument("quaternion poses move 3D meshes only".into()));
                }
                let rest_v = rest.vertices().chunks(3).map(|v| [v[0], v[1], v[2]]).collect();
                Param::Pose {
                    pose: *pose,
                    rest: rest_v,
                }
            }
        };
        let targets = match (&problem.loss.kind, &problem.target) {
            (LossKind::MresSmooth, TargetSpec::Raster(_)) => {
                return Err(Error::InvalidArgument(
                    "the multi-resolution loss needs a target mesh".into(),
                ))
            }
            (LossKind::MresSmooth, TargetSpec::Mesh(src)) => {
                let target = src.load()?;
                let levels = if problem.loss.resolutions.is_empty() {
                    vec![problem.raster.resolution]
                } else {
                    problem.loss.resolutions.clone()
                };
                levels
                    .iter()
                    .map(|&r| Ok((r, rasterize(&target, &config(r)?)?)))
                    .collect::<Result<Vec<_>>>()?
            }
            (_, TargetSpec::Mesh(src)) => {
                let r = problem.raster.resolution;
                vec![(r, rasterize(&src.load()?, &config(r)?)?)]
            }
            (_, TargetSpec::Raster(path)) => {
                let raster = Raster::read_binary(path)?;
                if raster.dim != rest.dim()
                    || raster.resolution != problem.raster.resolution
                    || raster.channels != rest.channels()
                {
                    return Err(Error::GridMismatch(format!(
                        "target raster is {}D, R={}, {} channels",
                        raster.dim, raster.resolution, raster.channels
                    )));
                }
                vec![(raster.resolution, raster)]
            }
        };
        let cycle = if problem.loss.kind == LossKind::MresSmooth && problem.loss.lambda > 0.0 {
            Some(polygon_cycle(&rest)?)
        } else {
            None
        };
        Ok(Self {
            rest,
            param,
            loss: problem.loss.clone(),
            filter,
            mode,
            targets,
            cycle,
        })
    }

    /// Starting parameters.
    pub fn initial(&self) -> Vec<f64> {
        match &self.param {
            Param::Vertices => self.rest.vertices().to_vec(),
            Param::Rig(rig) => rig.controls.iter().flatten().copied().collect(),
            Param::Pose { pose, .. } => pose.q.iter().chain(&pose.t).copied().collect(),
        }
    }

    fn pose_at(pose: &PoseQuat, x: &[f64]) -> PoseQuat {
        PoseQuat {
            q: [x[0], x[1], x[2], x[3]],
            t: [x[4], x[5], x[6]],
            pivot: pose.pivot,
        }
    }

    /// Mesh produced by a parameter vector.
    pub fn mesh_at(&self, x: &[f64]) -> Result<SimplexMesh> {
        match &self.param {
            Param::Vertices => self.rest.with_vertices(x.to_vec()),
            Param::Rig(rig) => {
                let mut rig = rig.clone();
                rig.controls = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                self.rest
                    .with_vertices(rig.lbs_apply()?.into_iter().flatten().collect())
            }
            Param::Pose { pose, rest } => {
                let moved = Self::pose_at(pose, x).quat_apply(rest)?;
                self.rest.with_vertices(moved.into_iter().flatten().collect())
            }
        }
    }

    /// Loss value only.
    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x, false)?.0)
    }

    /// Loss and its gradient with respect to the parameters.
    pub fn loss_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval(x, true)
    }

    fn eval(&self, x: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let mesh = self.mesh_at(x)?;
        let mut loss = 0.0;
        let mut d_vertices = vec![0.0; mesh.vertices().len()];
        for (res, target) in &self.targets {
            let config = RasterizeConfig {
                resolution: *res,
                filter: self.filter,
                mode: self.mode,
                strict: false,
            };
            let raster = rasterize(&mesh, &config)?;
            let mut cot = Raster::zeros(raster.dim, raster.resolution, raster.channels);
            for ((c, a), b) in cot.values.iter_mut().zip(&raster.values).zip(&target.values) {
                let r = a - b;
                match self.loss.kind {
                    LossKind::L2 => {
                        loss += r * r;
                        *c = 2.0 * r;
                    }
                    LossKind::L1 | LossKind::MresSmooth => {
                        loss += r.abs();
                        *c = if r > 0.0 {
                            1.0
                        } else if r < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            if with_grad {
                let g = rasterize_backward(&mesh, &config, &cot)?;
                d_vertices.iter_mut().zip(&g.d_vertices).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(order) = &self.cycle {
            let poly = Polygon::new(order.iter().map(|&v| [mesh.vertex(v)[0], mesh.vertex(v)[1]]).collect())?;
            let (smooth, grad) = loss_smooth(&poly)?;
            loss += self.loss.lambda * smooth;
            for (g, &v) in grad.iter().zip(order) {
                d_vertices[2 * v] += self.loss.lambda * g[0];
                d_vertices[2 * v + 1] += self.loss.lambda * g[1];
            }
        }
        if !with_grad {
            return Ok((loss, Vec::new()));
        }
        let grad = match &self.param {
            Param::Vertices => d_vertices,
            Param::Rig(rig) => {
                let mut rig = rig.clone();
                rig.controls = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                let dv: Vec<[f64; 2]> = d_vertices.chunks(2).map(|v| [v[0], v[1]]).collect();
                rig.lbs_pullback(&dv)?.into_iter().flatten().collect()
            }
            Param::Pose { pose, rest } => {
                let dv: Vec<[f64; 3]> = d_vertices.chunks(3).map(|v| [v[0], v[1], v[2]]).collect();
                let g = Self::pose_at(pose, x).quat_pullback(rest, &dv)?;
                g.dq.iter().chain(&g.dt).copied().collect()
            }
        };
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Loss or gradient vanished.
    Stationary,
    /// Loss changed by less than the tolerance over the convergence window.
    Converged,
    /// No step size in the backtracking range decreased the loss.
    Stalled,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub rows: Vec<TrajectoryRow>,
    /// Parameter vector after each recorded iteration.
    pub snapshots: Vec<Vec<f64>>,
    pub stop: StopReason,
}

impl FitResult {
    pub fn final_params(&self) -> &[f64] {
        self.snapshots.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn write_trajectory_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(TRAJECTORY_HEADER.split(','))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite_or(loss: f64, iteration: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss(iteration))
    }
}

/// Plain gradient descent on `objective` from `x0`.
pub fn descend(objective: &Objective, x0: Vec<f64>, schedule: &Schedule) -> Result<FitResult> {
    let mut x = x0;
    let (loss, mut grad) = objective.loss_and_grad(&x)?;
    let mut loss = finite_or(loss, 0)?;
    let mut rows = vec![TrajectoryRow {
        iteration: 0,
        loss,
        grad_norm: norm(&grad),
    }];
    let mut snapshots = vec![x.clone()];
    if loss == 0.0 || rows[0].grad_norm == 0.0 {
        return Ok(FitResult {
            rows,
            snapshots,
            stop: StopReason::Stationary,
        });
    }
    let mut stop = StopReason::IterationCap;
    for it in 1..=schedule.max_iters {
        let mut step = schedule.step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let trial_loss = objective.loss(&trial);
            // a trial that leaves the valid domain (e.g. a collapsed quaternion) counts as an increase
            let trial_loss = match trial_loss {
                Ok(l) if !l.is_finite() && !schedule.backtracking => return Err(Error::NonFiniteLoss(it)),
                Ok(l) => l,
                Err(e) if !schedule.backtracking => return Err(e),
                Err(_) => f64::INFINITY,
            };
            if !schedule.backtracking || trial_loss <= loss {
                accepted = Some(trial);
                break;
            }
            step /= 2.0;
        }
        let Some(next) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        x = next;
        let (l, g) = objective.loss_and_grad(&x)?;
        loss = finite_or(l, it)?;
        grad = g;
        rows.push(TrajectoryRow {
            iteration: it,
            loss,
            grad_norm: norm(&grad),
        });
        snapshots.push(x.clone());
        if loss == 0.0 || rows[it].grad_norm == 0.0 {
            stop = StopReason::Stationary;
            break;
        }
        if it >= CONVERGENCE_WINDOW && (rows[it - CONVERGENCE_WINDOW].loss - loss).abs() < schedule.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(FitResult { rows, snapshots, stop })
}

/// Runs a fit problem end to end.
pub fn fit(problem: &FitProblem) -> Result<(Objective, FitResult)> {
    let objective = Objective::new(problem)?;
    let result = descend(&objective, objective.initial(), &problem.schedule)?;
    Ok((objective, result))
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    iterations: usize,
    initial_loss: f64,
    final_loss: f64,
    stop: StopReason,
    params: &'a [f64],
}

/// Writes `trajectory.csv`, `final_mesh.json`, `summary.json`, and
/// `snapshot_<iteration>.json` every `snapshot_every` iterations.
pub fn write_fit_outputs(
    objective: &Objective,
    result: &FitResult,
    snapshot_every: Option<usize>,
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    result.write_trajectory_csv(dir.join("trajectory.csv"))?;
    if let Some(k) = snapshot_every {
        for (row, x) in result.rows.iter().zip(&result.snapshots) {
            if row.iteration % k == 0 {
                objective
                    .mesh_at(x)?
                    .write_json(dir.join(format!("snapshot_{:05}.json", row.iteration)))?;
            }
        }
    }
    objective
        .mesh_at(result.final_params())?
        .write_json(dir.join("final_mesh.json"))?;
    let summary = Summary {
        iterations: result.rows.last().map_or(0, |r| r.iteration),
        initial_loss: result.rows.first().map_or(f64::NAN, |r| r.loss),
        final_loss: result.final_loss(),
        stop: result.stop,
        params: if matches!(objective.param, Param::Vertices) {
            &[]
        } else {
            result.final_params()
        },
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Intersection over union of `{a > threshold}` and `{b > threshold}`;
/// 1 when both sets are empty.
pub fn iou(a: &Raster, b: &Raster, threshold: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::GridMismatch("rasters differ in shape".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (p, q) = (*x > threshold, *y > threshold);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_mask(lo: usize, hi: usize) -> Raster {
        let mut r = Raster::zeros(2, 8, 1);
        for i in 0..8 {
            for j in lo..hi {
                r.values[i * 8 + j] = 1.0;
            }
        }
        r
    }

    #[test]
    fn iou_examples() {
        let a = half_mask(0, 4);
        assert_eq!(iou(&a, &a, 0.5).unwrap(), 1.0);
        assert_eq!(iou(&a, &half_mask(4, 8), 0.5).unwrap(), 0.0);
        assert!((iou(&a, &half_mask(2, 6), 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let z = Raster::zeros(2, 8, 1);
        assert_eq!(iou(&z, &z, 0.5).unwrap(), 1.0);
        assert!(iou(&a, &Raster::zeros(2, 4, 1), 0.5).is_err());
    }

    fn square_boundary(lo: f64, hi: f64) -> SimplexMesh {
        SimplexMesh::with_unit_density(2, 1, vec![lo, lo, hi, lo, hi, hi, lo, hi], vec![0, 1, 1, 2, 2, 3, 3, 0])
            .unwrap()
    }

    fn problem(mesh: SimplexMesh, target: SimplexMesh, kind: LossKind) -> FitProblem {
        FitProblem {
            variable: Variable::Vertices,
            mesh: MeshSource::Inline(mesh),
            target: TargetSpec::Mesh(MeshSource::Inline(target)),
            raster: RasterSpec {
                resolution: 16,
                filter: 2.0,
                mode: Mode::AuxNode,
            },
            loss: LossSpec {
                kind,
                lambda: 0.0,
                resolutions: vec![],
            },
            schedule: Schedule {
                step: 1e-3,
                max_iters: 5,
                tol: 1e-12,
                backtracking: true,
            },
            snapshot_every: None,
        }
    }

    #[test]
    fn identity_fit_stops_at_iteration_zero() {
        let m = square_boundary(0.3, 0.7);
        let (_, r) = fit(&problem(m.clone(), m, LossKind::L2)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.stop, StopReason::Stationary);
        assert_eq!(r.final_loss(), 0.0);
    }

    #[test]
    fn backtracking_never_increases_loss() {
        let mut p = problem(square_boundary(0.3, 0.7), square_boundary(0.35, 0.72), LossKind::L1);
        p.schedule.step = 10.0;
        let (_, r) = fit(&p).unwrap();
        assert!(r.rows.windows(2).all(|w| w[1].loss <= w[0].loss));
        assert!(r.final_loss() < r.rows[0].loss);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut p = problem(square_boundary(0.3, 0.7), square_boundary(0.32, 0.75), LossKind::L2);
        p.loss = LossSpec {
            kind: LossKind::MresSmooth,
            lambda: 0.5,
            resolutions: vec![8, 16],
        };
        p.variable = Variable::Rig(RigSpec {
            centers: vec![[0.3, 0.3], [0.7, 0.7], [0.3, 0.7]],
            weights: None,
            controls: None,
        });
        let obj = Objective::new(&p).unwrap();
        // L1 has kinks; compare an L2 objective for a smooth check of the rig chain
        let mut p2 = p.clone();
        p2.loss = LossSpec {
            kind: LossKind::L2,
            lambda: 0.0,
            resolutions: vec![],
        };
        let obj2 = Objective::new(&p2).unwrap();
        let x: Vec<f64> = vec![0.01, -0.02, 0.1, 0.0, 0.01, -0.05, 0.02, 0.0, 0.03];
        let (_, g) = obj2.loss_and_grad(&x).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (obj2.loss(&up).unwrap() - obj2.loss(&dn).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
        assert!(obj.loss(&x).unwrap() > 0.0);
    }

    #[test]
    fn problem_json_round_trip_and_checks() {
        let text = r#"{
            "variable": {"kind": "pose", "q": [1, 0, 0, 0]},
            "mesh": "missing.json",
            "target": {"raster": "target.bin"},
            "raster": {"resolution": 32},
            "loss": {"kind": "l1"},
            "schedule": {"step": 0.01}
        }"#;
        let p = FitProblem::from_json_str(text).unwrap();
        assert_eq!(p.schedule.max_iters, 500);
        assert!(p.schedule.backtracking);
        assert_eq!(p.raster.filter, 2.0);
        assert!(matches!(p.variable, Variable::Pose(q) if q.pivot == [0.5; 3]));
        assert!(matches!(Objective::new(&p), Err(Error::Io(_))));
        let mut bad = p.clone();
        bad.schedule.step = 0.0;
        assert!(matches!(bad.check(), Err(Error::InvalidArgument(_))));
        assert!(FitProblem::from_json_str(r#"{"variable": {"kind": "spline"}}"#).is_err());
    }

    #[test]
    fn cycle_extraction() {
        let m = square_boundary(0.2, 0.8);
        assert_eq!(polygon_cycle(&m).unwrap(), vec![0, 1, 2, 3]);
        let two = SimplexMesh::with_unit_density(
            2,
            1,
            vec![0.1, 0.1, 0.2, 0.1, 0.2, 0.2, 0.5, 0.5, 0.6, 0.5, 0.6, 0.6],
            vec![0, 1, 1, 2, 2, 0, 3, 4, 4, 5, 5, 3],
        )
        .unwrap();
        assert!(polygon_cycle(&two).is_err());
    }
}
