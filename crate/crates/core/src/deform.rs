//! Deformation rigs with vertex-space Jacobians: 2D linear blend skinning
//! over control handles and a 3D quaternion pose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default regularizer of the inverse-distance skinning weights.
pub const WEIGHT_EPS: f64 = 1e-4;

const ROW_SUM_TOL: f64 = 1e-9;

/// Control handles with `(t_x, t_y, theta)` each, blending rigid motions
/// about their rest centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRig {
    pub rest_vertices: Vec<[f64; 2]>,
    pub centers: Vec<[f64; 2]>,
    /// `n_vertices x n_controls`, row-major.
    pub weights: Vec<f64>,
    pub controls: Vec<[f64; 3]>,
}

/// `w_j(v) ~ 1 / (|v - c_j|^2 + eps)`, normalized per vertex.
pub fn inverse_distance_weights(vertices: &[[f64; 2]], centers: &[[f64; 2]], eps: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(vertices.len() * centers.len());
    for v in vertices {
        let row: Vec<f64> = centers
            .iter()
            .map(|c| 1.0 / ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + eps))
            .collect();
        let total: f64 = row.iter().sum();
        w.extend(row.iter().map(|x| x / total));
    }
    w
}

/// `n` centers spaced evenly along the perimeter of the vertices' bounding box,
/// starting at its lower-left corner.
pub fn bounding_box_centers(vertices: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in vertices {
        for a in 0..2 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
    let perimeter = 2.0 * (w + h);
    (0..n)
        .map(|i| {
            let mut s = perimeter * i as f64 / n as f64;
            if s < w {
                return [lo[0] + s, lo[1]];
            }
            s -= w;
            if s < h {
                return [hi[0], lo[1] + s];
            }
            s -= h;
            if s < w {
                return [hi[0] - s, hi[1]];
            }
            [lo[0], hi[1] - (s - w)]
        })
        .collect()
}

impl ControlRig {
    /// Builds a rig at rest. Without explicit weights, inverse-distance
    /// weights with [`WEIGHT_EPS`] are used.
    pub fn new(rest_vertices: Vec<[f64; 2]>, centers: Vec<[f64; 2]>, weights: Option<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("rig needs at least one control".into()));
        }
        let weights = weights.unwrap_or_else(|| inverse_distance_weights(&rest_vertices, &centers, WEIGHT_EPS));
        let rig = Self {
            controls: vec![[0.0; 3]; centers.len()],
            rest_vertices,
            centers,
            weights,
        };
        rig.check()?;
        Ok(rig)
    }

    pub fn n_controls(&self) -> usize {
        self.centers.len()
    }

    pub fn weight(&self, v: usize, j: usize) -> f64 {
        self.weights[v * self.n_controls() + j]
    }

    fn check(&self) -> Result<()> {
        let m = self.n_controls();
        if self.weights.len() != self.rest_vertices.len() * m {
            return Err(Error::InvalidArgument(format!(
                "weights hold {} entries, expected {} vertices x {m} controls",
                self.weights.len(),
                self.rest_vertices.len()
            )));
        }
        if self.controls.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{} controls for {m} centers",
                self.controls.len()
            )));
        }
        for (v, row) in self.weights.chunks(m).enumerate() {
            if row.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "vertex {v} has a negative or non-finite weight"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("weights of vertex {v} sum to {sum}")));
            }
        }
        Ok(())
    }

    /// `v' = sum_j w_j (R(theta_j) (v - c_j) + c_j + t_j)`.
    pub fn lbs_apply(&self) -> Result<Vec<[f64; 2]>> {
        self.check()?;
        let m = self.n_controls();
        Ok(self
            .rest_vertices
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let mut out = [0.0; 2];
                for j in 0..m {
                    let w = self.weight(v, j);
                    let [tx, ty, th] = self.controls[j];
                    let c = self.centers[j];
                    let (s, co) = th.sin_cos();
                    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                    out[0] += w * (co * dx - s * dy + c[0] + tx);
                    out[1] += w * (s * dx + co * dy + c[1] + ty);
                }
                out
            })
            .collect())
    }

    /// `d v' / d (t_x, t_y, theta)` of vertex `v`, one 2x3 block per control.
    pub fn lbs_jacobian(&self, v: usize) -> Vec<[[f64; 3]; 2]> {
        let p = self.rest_vertices[v];
        (0..self.n_controls())
            .map(|j| {
                let w = self.weight(v, j);
                let c = self.centers[j];
                let (s, co) = self.controls[j][2].sin_cos();
                let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                [[w, 0.0, w * (-s * dx - co * dy)], [0.0, w, w * (co * dx - s * dy)]]
            })
            .collect()
    }

    /// Transposed-Jacobian product: control gradients from vertex gradients.
    pub fn lbs_pullback(&self, d_vertices: &[[f64; 2]]) -> Result<Vec<[f64; 3]>> {
        if d_vertices.len() != self.rest_vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vertex gradients for {} vertices",
                d_vertices.len(),
                self.rest_vertices.len()
            )));
        }
        let mut out = vec![[0.0; 3]; self.n_controls()];
        for (v, g) in d_vertices.iter().enumerate() {
            for (j, block) in self.lbs_jacobian(v).iter().enumerate() {
                for k in 0..3 {
                    out[j][k] += block[0][k] * g[0] + block[1][k] * g[1];
                }
            }
        }
        Ok(out)
    }
}

/// Rig file contents; rest vertices come from the mesh being deformed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSpec {
    pub centers: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<[f64; 3]>>,
}

impl RigSpec {
    pub fn build(&self, rest_vertices: Vec<[f64; 2]>) -> Result<ControlRig> {
        let weights = self
            .weights
            .as_ref()
            .map(|rows| rows.iter().flatten().copied().collect());
        let mut rig = ControlRig::new(rest_vertices, self.centers.clone(), weights)?;
        if let Some(c) = &self.controls {
            rig.controls = c.clone();
            rig.check()?;
        }
        Ok(rig)
    }
}

/// Rigid 3D pose: rotation by the normalized quaternion `q = (a, b, c, d)`
/// about `pivot`, then translation by `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseQuat {
    pub q: [f64; 4],
    pub t: [f64; 3],
    pub pivot: [f64; 3],
}

impl Default for PoseQuat {
    fn default() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0],
            t: [0.0; 3],
            pivot: Self::default_pivot(),
        }
    }
}

/// Gradient of a loss with respect to the raw quaternion and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGradient {
    pub dq: [f64; 4],
    pub dt: [f64; 3],
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl PoseQuat {
    pub fn default_pivot() -> [f64; 3] {
        [0.5; 3]
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = (angle / 2.0).sin_cos();
        Self {
            q: [c, axis[0] * s, axis[1] * s, axis[2] * s],
            ..Self::default()
        }
    }

    fn unit(&self) -> Result<([f64; 4], f64)> {
        let n = self.q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n >= 1e-8) {
            return Err(Error::InvalidArgument(format!("quaternion norm {n} is too small")));
        }
        Ok((self.q.map(|x| x / n), n))
    }

    /// Angle in radians of the rotation taking this pose's orientation to `other`'s.
    pub fn angle_to(&self, other: &PoseQuat) -> Result<f64> {
        let (a, _) = self.unit()?;
        let (b, _) = other.unit()?;
        let d = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().abs().min(1.0);
        Ok(2.0 * d.acos())
    }

    pub fn quat_apply(&self, vertices: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let ([a, b, c, d], _) = self.unit()?;
        let w = [b, c, d];
        Ok(vertices
            .iter()
            .map(|v| {
                let u = [v[0] - self.pivot[0], v[1] - self.pivot[1], v[2] - self.pivot[2]];
                // R u = (a^2 - |w|^2) u + 2 (w.u) w + 2 a (w x u)
                let s = a * a - dot3(&w, &w);
                let wu = dot3(&w, &u);
                let x = cross3(&w, &u);
                std::array::from_fn(|k| s * u[k] + 2.0 * wu * w[k] + 2.0 * a * x[k] + self.pivot[k] + self.t[k])
            })
            .collect())
    }

    /// Pulls vertex gradients back to `(q, t)`, through the normalization of `q`.
    pub fn quat_pullback(&self, vertices: &[[f64; 3]], d_vertices: &[[f64; 3]]) -> Result<PoseGradient> {
        if vertices.len() != d_vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vertex gradients for {} vertices",
                d_vertices.len(),
                vertices.len()
            )));
        }
        let (qh, norm) = self.unit()?;
        let a = qh[0];
        let w = [qh[1], qh[2], qh[3]];
        let mut dqh = [0.0; 4];
        let mut dt = [0.0; 3];
        for (v, g) in vertices.iter().zip(d_vertices) {
            let u = [v[0] - self.pivot[0], v[1] - self.pivot[1], v[2] - self.pivot[2]];
            let gu = dot3(g, &u);
            dqh[0] += 2.0 * a * gu + 2.0 * dot3(g, &cross3(&w, &u));
            let wu = dot3(&w, &u);
            let wg = dot3(&w, g);
            let ug = cross3(&u, g);
            for k in 0..3 {
                dqh[k + 1] += -2.0 * gu * w[k] + 2.0 * wu * g[k] + 2.0 * wg * u[k] + 2.0 * a * ug[k];
                dt[k] += g[k];
            }
        }
        let proj = qh.iter().zip(&dqh).map(|(x, y)| x * y).sum::<f64>();
        let dq = std::array::from_fn(|k| (dqh[k] - qh[k] * proj) / norm);
        Ok(PoseGradient { dq, dt })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn rig() -> ControlRig {
        let rest = vec![[0.2, 0.3], [0.7, 0.25], [0.5, 0.8], [0.4, 0.5]];
        let mut r = ControlRig::new(rest, vec![[0.2, 0.2], [0.8, 0.3], [0.5, 0.9]], None).unwrap();
        r.controls = vec![[0.05, -0.02, 0.3], [-0.01, 0.04, -0.2], [0.02, 0.0, 0.7]];
        r
    }

    #[test]
    fn identity_translation_rotation() {
        let mut r = rig();
        r.controls = vec![[0.0; 3]; 3];
        let out = r.lbs_apply().unwrap();
        for (a, b) in out.iter().zip(&r.rest_vertices) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }

        let mut one = ControlRig::new(vec![[0.2, 0.3], [0.6, 0.1]], vec![[0.5, 0.5]], None).unwrap();
        one.controls = vec![[0.1, 0.0, 0.0]];
        let out = one.lbs_apply().unwrap();
        assert!((out[0][0] - 0.3).abs() < 1e-15 && (out[1][0] - 0.7).abs() < 1e-15);

        one.controls = vec![[0.0, 0.0, FRAC_PI_2]];
        let out = one.lbs_apply().unwrap();
        // (0.2, 0.3) - c = (-0.3, -0.2), rotated to (0.2, -0.3)
        assert!((out[0][0] - 0.7).abs() < 1e-15 && (out[0][1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn shared_transform_applies_directly() {
        let mut r = rig();
        let (tx, ty, th) = (0.03, -0.07, 0.4);
        // the same rigid motion expressed about each center
        r.controls = r
            .centers
            .iter()
            .map(|c| {
                let (s, co) = f64::sin_cos(th);
                let rc = [co * c[0] - s * c[1], s * c[0] + co * c[1]];
                [rc[0] - c[0] + tx, rc[1] - c[1] + ty, th]
            })
            .collect();
        let out = r.lbs_apply().unwrap();
        let (s, co) = f64::sin_cos(th);
        for (o, v) in out.iter().zip(&r.rest_vertices) {
            assert!((o[0] - (co * v[0] - s * v[1] + tx)).abs() < 1e-12);
            assert!((o[1] - (s * v[0] + co * v[1] + ty)).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let r = rig();
        let h = 1e-6;
        for v in 0..r.rest_vertices.len() {
            let jac = r.lbs_jacobian(v);
            for j in 0..r.n_controls() {
                for k in 0..3 {
                    let mut up = r.clone();
                    let mut dn = r.clone();
                    up.controls[j][k] += h;
                    dn.controls[j][k] -= h;
                    let (a, b) = (up.lbs_apply().unwrap()[v], dn.lbs_apply().unwrap()[v]);
                    for row in 0..2 {
                        let fd = (a[row] - b[row]) / (2.0 * h);
                        assert!((fd - jac[j][row][k]).abs() < 1e-6, "{v} {j} {k} {row}");
                    }
                }
            }
        }
    }

    #[test]
    fn theta_column_at_rest_is_perpendicular() {
        let r = ControlRig::new(vec![[0.3, 0.6]], vec![[0.5, 0.5]], None).unwrap();
        let jac = r.lbs_jacobian(0)[0];
        assert!((jac[0][2] + 0.1).abs() < 1e-15 && (jac[1][2] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn pullback_examples() {
        let r = rig();
        assert!(r
            .lbs_pullback(&[[0.0; 2]; 4])
            .unwrap()
            .iter()
            .flatten()
            .all(|x| *x == 0.0));
        let mut one = ControlRig::new(vec![[0.2, 0.3], [0.6, 0.1], [0.4, 0.4]], vec![[0.5, 0.5]], None).unwrap();
        one.controls = vec![[0.01, 0.02, 0.3]];
        let d = one.lbs_pullback(&[[1.0, 2.0]; 3]).unwrap();
        assert!((d[0][0] - 3.0).abs() < 1e-15 && (d[0][1] - 6.0).abs() < 1e-15);
        assert!(r.lbs_pullback(&[[0.0; 2]; 2]).is_err());
    }

    #[test]
    fn pullback_matches_finite_difference_of_loss() {
        let r = rig();
        let target = [[0.1, 0.2], [0.3, 0.4], [0.5, 0.1], [0.9, 0.7]];
        let loss = |rig: &ControlRig| -> f64 {
            rig.lbs_apply()
                .unwrap()
                .iter()
                .zip(&target)
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(3))
                .sum()
        };
        let out = r.lbs_apply().unwrap();
        let dv: Vec<[f64; 2]> = out
            .iter()
            .zip(&target)
            .map(|(a, b)| [2.0 * (a[0] - b[0]), 3.0 * (a[1] - b[1]).powi(2)])
            .collect();
        let d = r.lbs_pullback(&dv).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            for k in 0..3 {
                let mut up = r.clone();
                let mut dn = r.clone();
                up.controls[j][k] += h;
                dn.controls[j][k] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                assert!((fd - d[j][k]).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn weights_are_validated() {
        let rest = vec![[0.1, 0.1]];
        assert!(ControlRig::new(rest.clone(), vec![[0.0, 0.0], [1.0, 1.0]], Some(vec![0.7, 0.7])).is_err());
        assert!(ControlRig::new(rest.clone(), vec![[0.0, 0.0], [1.0, 1.0]], Some(vec![1.5, -0.5])).is_err());
        assert!(ControlRig::new(rest, vec![], None).is_err());
        let w = inverse_distance_weights(
            &[[0.3, 0.3], [0.9, 0.1]],
            &[[0.3, 0.3], [0.5, 0.5], [0.0, 1.0]],
            WEIGHT_EPS,
        );
        for row in w.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(w[0] > 0.99);
    }

    #[test]
    fn rig_spec_json() {
        let spec: RigSpec = serde_json::from_str(r#"{"centers": [[0.2, 0.2], [0.8, 0.8]]}"#).unwrap();
        let rig = spec.build(vec![[0.3, 0.3], [0.5, 0.5]]).unwrap();
        assert_eq!(rig.controls, vec![[0.0; 3]; 2]);
        assert!((rig.weight(1, 0) - 0.5).abs() < 1e-12);
        assert!(serde_json::from_str::<RigSpec>(r#"{"centres": []}"#).is_err());
    }

    #[test]
    fn bounding_box_centers_walk_the_perimeter() {
        let c = bounding_box_centers(&[[0.2, 0.2], [0.6, 0.4]], 4);
        assert_eq!(c.len(), 4);
        assert!((c[0][0] - 0.2).abs() < 1e-12 && (c[0][1] - 0.2).abs() < 1e-12);
        // perimeter 1.2, so the second center sits 0.3 along: past the bottom edge
        assert!((c[1][0] - 0.5).abs() < 1e-12 && (c[1][1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn quaternion_examples() {
        let v = [[0.1, 0.2, 0.3], [0.9, 0.5, 0.4]];
        let out = PoseQuat::default().quat_apply(&v).unwrap();
        assert!(out
            .iter()
            .flatten()
            .zip(v.iter().flatten())
            .all(|(a, b)| (a - b).abs() < 1e-15));
        let rz = PoseQuat::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2);
        let out = rz.quat_apply(&[[1.0, 0.5, 0.2]]).unwrap();
        assert!((out[0][0] - 0.5).abs() < 1e-15 && (out[0][1] - 1.0).abs() < 1e-15 && (out[0][2] - 0.2).abs() < 1e-15);
        let zero = PoseQuat {
            q: [0.0; 4],
            ..PoseQuat::default()
        };
        assert!(zero.quat_apply(&v).is_err());
    }

    #[test]
    fn quaternion_is_rigid_and_scale_free() {
        let v = [[0.1, 0.2, 0.3], [0.9, 0.5, 0.4], [0.3, 0.8, 0.6]];
        let p = PoseQuat {
            q: [0.9, -0.3, 0.5, 0.2],
            t: [0.1, -0.2, 0.05],
            ..PoseQuat::default()
        };
        let out = p.quat_apply(&v).unwrap();
        let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
        for i in 0..3 {
            for j in 0..i {
                assert!((dist(&out[i], &out[j]) - dist(&v[i], &v[j])).abs() < 1e-10);
            }
        }
        let scaled = PoseQuat {
            q: p.q.map(|x| 3.0 * x),
            ..p
        };
        let out2 = scaled.quat_apply(&v).unwrap();
        assert!(out
            .iter()
            .flatten()
            .zip(out2.iter().flatten())
            .all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn quaternion_pullback_matches_finite_differences() {
        let v = [[0.1, 0.2, 0.3], [0.9, 0.5, 0.4], [0.3, 0.8, 0.6]];
        let g = [[0.3, -1.0, 0.2], [0.5, 0.4, -0.7], [-0.2, 0.1, 0.9]];
        let p = PoseQuat {
            q: [1.3, -0.3, 0.5, 0.2],
            t: [0.1, -0.2, 0.05],
            ..PoseQuat::default()
        };
        let loss = |p: &PoseQuat| -> f64 {
            p.quat_apply(&v)
                .unwrap()
                .iter()
                .zip(&g)
                .map(|(o, gv)| dot3(o, gv))
                .sum()
        };
        let d = p.quat_pullback(&v, &g).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let (mut up, mut dn) = (p, p);
            up.q[k] += h;
            dn.q[k] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!(
                (fd - d.dq[k]).abs() < 1e-5 * fd.abs().max(1.0),
                "q{k}: {fd} vs {}",
                d.dq[k]
            );
        }
        for k in 0..3 {
            let (mut up, mut dn) = (p, p);
            up.t[k] += h;
            dn.t[k] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - d.dt[k]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn angle_between_poses() {
        let a = PoseQuat::default();
        let b = PoseQuat::from_axis_angle([0.0, 0.0, 1.0], 0.5);
        assert!((a.angle_to(&b).unwrap() - 0.5).abs() < 1e-12);
        let neg = PoseQuat {
            q: b.q.map(|x| -x),
            ..b
        };
        assert!(b.angle_to(&neg).unwrap() < 1e-6);
    }
}
