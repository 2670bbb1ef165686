//! Pinhole intrinsics, world-from-camera poses, learnable pose increments,
//! and trajectories.
//!
//! Conventions: camera frame is x right, y down, z forward. Poses are stored
//! world-from-camera with a Hamilton unit quaternion. Pixel `(i, j)` has its
//! center at `uv = (i, j)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie;

fn default_znear() -> f64 {
    0.01
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_znear")]
    pub znear: f64,
}

impl CameraIntrinsics {
    /// Intrinsics with the principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            znear: default_znear(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && self.znear > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    pub fn unproject(&self, uv: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (uv.x - self.cx) / self.fx * depth,
            (uv.y - self.cy) / self.fy * depth,
            depth,
        )
    }
}

/// World-from-camera rigid pose with a timestamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub r: UnitQuaternion<f64>,
    pub t: Vector3<f64>,
    pub timestamp: f64,
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity(0.0)
    }
}

impl CameraPose {
    pub fn identity(timestamp: f64) -> Self {
        Self {
            r: UnitQuaternion::identity(),
            t: Vector3::zeros(),
            timestamp,
        }
    }

    pub fn new(r: UnitQuaternion<f64>, t: Vector3<f64>, timestamp: f64) -> Self {
        Self { r, t, timestamp }
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, t: Vector3<f64>, timestamp: f64) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        Self {
            r: UnitQuaternion::from_rotation_matrix(&rot),
            t,
            timestamp,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.r.to_rotation_matrix().matrix()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>, timestamp: f64) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into();
        Self::from_rotation_matrix(&r, t, timestamp)
    }

    pub fn inverse(&self) -> Self {
        let ri = self.r.inverse();
        Self {
            r: ri,
            t: -(ri * self.t),
            timestamp: self.timestamp,
        }
    }

    /// `self ∘ other`; keeps `other`'s timestamp.
    pub fn compose(&self, other: &CameraPose) -> Self {
        Self {
            r: self.r * other.r,
            t: self.r * other.t + self.t,
            timestamp: other.timestamp,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    /// Rotation angle of this pose, in radians.
    pub fn angle(&self) -> f64 {
        self.r.angle()
    }
}

/// Chains a relative pose `T_{t→t−1}` onto the previous absolute pose.
pub fn compose_relative(prev_abs: &CameraPose, rel: &CameraPose) -> CameraPose {
    prev_abs.compose(rel)
}

/// Learnable se(3) increment applied on the camera side of a pose.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseDelta {
    pub omega: Vector3<f64>,
    pub upsilon: Vector3<f64>,
}

impl PoseDelta {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            omega: Vector3::new(x[0], x[1], x[2]),
            upsilon: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.upsilon.x,
            self.upsilon.y,
            self.upsilon.z,
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.omega == Vector3::zeros() && self.upsilon == Vector3::zeros()
    }
}

/// `pose ∘ exp([omega, upsilon])`.
pub fn apply_delta(pose: &CameraPose, d: &PoseDelta) -> CameraPose {
    if d.is_zero() {
        return *pose;
    }
    let (r, t) = lie::se3_exp(&d.omega, &d.upsilon);
    let inc = CameraPose::from_rotation_matrix(&r, t, pose.timestamp);
    pose.compose(&inc)
}

/// Projects a world point; errors when it is not in front of `znear`.
pub fn world_to_pixel(
    p_world: &Vector3<f64>,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, f64)> {
    let pc = pose.inverse().transform_point(p_world);
    if pc.z <= k.znear {
        return Err(Error::BehindCamera {
            z: pc.z,
            znear: k.znear,
        });
    }
    Ok((k.project(&pc), pc.z))
}

pub fn pixel_to_world(
    uv: &Vector2<f64>,
    depth: f64,
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(pose.transform_point(&k.unproject(uv, depth)))
}

/// A camera view used for rendering: base pose plus refinement increment,
/// with the camera-from-world transform precomputed.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub pose: CameraPose,
    pub delta: PoseDelta,
    /// Camera-from-world rotation of the refined pose.
    pub rot_cw: Matrix3<f64>,
    /// Camera-from-world translation of the refined pose.
    pub trans_cw: Vector3<f64>,
    /// Camera center in world coordinates.
    pub center: Vector3<f64>,
}

impl View {
    pub fn new(pose: &CameraPose, delta: &PoseDelta) -> Self {
        let refined = apply_delta(pose, delta);
        let rot_wc = refined.rotation_matrix();
        let rot_cw = rot_wc.transpose();
        Self {
            pose: *pose,
            delta: *delta,
            rot_cw,
            trans_cw: -(rot_cw * refined.t),
            center: refined.t,
        }
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rot_cw * p_world + self.trans_cw
    }

    pub fn refined_pose(&self) -> CameraPose {
        apply_delta(&self.pose, &self.delta)
    }

    /// Pulls gradients w.r.t. the camera-from-world rotation, translation, and
    /// the camera center back to the increment `(omega, upsilon)`.
    pub fn delta_backward(
        &self,
        grad_rot_cw: &Matrix3<f64>,
        grad_trans_cw: &Vector3<f64>,
        grad_center: &Vector3<f64>,
    ) -> [f64; 6] {
        let omega = &self.delta.omega;
        let upsilon = &self.delta.upsilon;
        let jr = lie::right_jacobian(omega);
        let v = lie::left_jacobian(omega);
        let r_inc = lie::so3_exp(omega);
        let dv = lie::left_jacobian_times_derivative(omega, upsilon);
        let r_base = self.pose.rotation_matrix();

        let mut g_omega = -(jr.transpose() * lie::vee_antisym(&(self.rot_cw * grad_rot_cw.transpose())));
        g_omega += jr.transpose() * grad_trans_cw.cross(&self.trans_cw);
        g_omega -= dv.transpose() * (r_inc * grad_trans_cw);
        let mut g_upsilon = -(v.transpose() * (r_inc * grad_trans_cw));

        let gc_local = r_base.transpose() * grad_center;
        g_omega += dv.transpose() * gc_local;
        g_upsilon += v.transpose() * gc_local;
        [
            g_omega.x,
            g_omega.y,
            g_omega.z,
            g_upsilon.x,
            g_upsilon.y,
            g_upsilon.z,
        ]
    }
}

/// Pixel coordinates of a world point under a refined view and their 2×6
/// Jacobian w.r.t. `(omega, upsilon)`.
pub fn world_to_pixel_with_delta_jacobian(
    p_world: &Vector3<f64>,
    view: &View,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, [[f64; 6]; 2])> {
    let pc = view.to_camera(p_world);
    if pc.z <= k.znear {
        return Err(Error::BehindCamera {
            z: pc.z,
            znear: k.znear,
        });
    }
    let uv = k.project(&pc);
    let mut jac = [[0.0; 6]; 2];
    for (row, jrow) in jac.iter_mut().enumerate() {
        let g_pc = if row == 0 {
            Vector3::new(k.fx / pc.z, 0.0, -k.fx * pc.x / (pc.z * pc.z))
        } else {
            Vector3::new(0.0, k.fy / pc.z, -k.fy * pc.y / (pc.z * pc.z))
        };
        let g_rot = g_pc * p_world.transpose();
        *jrow = view.delta_backward(&g_rot, &g_pc, &Vector3::zeros());
    }
    Ok((uv, jac))
}

/// Ordered, timestamped absolute poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<CameraPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>) -> Self {
        Self { poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.t).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.timestamp).collect()
    }

    /// Relative poses `T_{i→i−1}`, identity for the first entry.
    pub fn relative_poses(&self) -> Vec<CameraPose> {
        self.poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == 0 {
                    CameraPose::identity(p.timestamp)
                } else {
                    self.poses[i - 1].inverse().compose(p)
                }
            })
            .collect()
    }
}
