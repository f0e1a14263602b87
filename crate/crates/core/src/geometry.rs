//! Rigid-body pose algebra, Euler-angle conventions and pinhole projection.
//!
//! Orientation is a triple of intrinsic Z-Y-X Euler angles stored as
//! `(roll, pitch, yaw)`: roll about x, pitch about y, yaw about z, with
//! `R = Rz(yaw) · Ry(pitch) · Rx(roll)`. Camera frames are x-right, y-down,
//! z-forward. A pose maps points from its own frame into its parent frame,
//! so an absolute pose is camera-to-world.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

pub fn wrap_angles(a: &Vector3<f64>) -> Vector3<f64> {
    a.map(wrap_angle)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix for `(roll, pitch, yaw)` under the Z-Y-X convention.
pub fn euler_to_rotation(angles: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(angles[2]) * rot_y(angles[1]) * rot_x(angles[0])
}

/// Partial derivatives `∂R/∂roll`, `∂R/∂pitch`, `∂R/∂yaw`.
pub fn euler_jacobian(angles: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(angles[0]), rot_y(angles[1]), rot_z(angles[2]));
    [
        rz * ry * d_rot_x(angles[0]),
        rz * d_rot_y(angles[1]) * rx,
        d_rot_z(angles[2]) * ry * rx,
    ]
}

/// Extracts `(roll, pitch, yaw)` from a rotation matrix.
///
/// At gimbal lock (`|pitch| = π/2`) roll and yaw are not separable; roll is
/// set to zero and the whole residual rotation is assigned to yaw.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Vector3<f64> {
    let cp = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    let pitch = (-r[(2, 0)]).atan2(cp);
    if cp < 1e-12 {
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        Vector3::new(0.0, pitch, wrap_angle(yaw))
    } else {
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        Vector3::new(roll, pitch, yaw)
    }
}

/// A rigid transform: translation plus Z-Y-X Euler orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6DoF {
    translation: Vector3<f64>,
    orientation: Vector3<f64>,
}

impl Default for Pose6DoF {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6DoF {
    /// Builds a pose; each Euler angle is wrapped into `(-π, π]`.
    pub fn new(translation: Vector3<f64>, orientation: Vector3<f64>) -> Self {
        Self {
            translation,
            orientation: wrap_angles(&orientation),
        }
    }

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            orientation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(t, Vector3::zeros())
    }

    pub fn from_params(p: &[f64; 6]) -> Self {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
        )
    }

    /// `[tx, ty, tz, roll, pitch, yaw]`.
    pub fn params(&self) -> [f64; 6] {
        let (t, o) = (&self.translation, &self.orientation);
        [t[0], t[1], t[2], o[0], o[1], o[2]]
    }

    pub fn from_rotation_translation(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self::new(t, rotation_to_euler(r))
    }

    #[inline]
    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    #[inline]
    pub fn orientation(&self) -> Vector3<f64> {
        self.orientation
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(&self.orientation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_rotation_translation(&r, t)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose6DoF) -> Pose6DoF {
        let r = self.rotation();
        Pose6DoF::from_rotation_translation(
            &(r * other.rotation()),
            r * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose6DoF {
        let rt = self.rotation().transpose();
        Pose6DoF::from_rotation_translation(&rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation
    }

    /// True if the transform is exactly the identity (bitwise zero parameters).
    pub fn is_identity(&self) -> bool {
        self.translation == Vector3::zeros() && self.orientation == Vector3::zeros()
    }
}

/// `a ∘ b`.
pub fn compose(a: &Pose6DoF, b: &Pose6DoF) -> Pose6DoF {
    a.compose(b)
}

pub fn invert(p: &Pose6DoF) -> Pose6DoF {
    p.inverse()
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.fx.is_finite()
            && self.fy.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Intrinsics for an image box-downsampled by `factor`.
    ///
    /// Pixel centers follow the box filter: fine pixel `u` maps to coarse
    /// coordinate `(u + 0.5) / factor - 0.5`.
    pub fn downscaled(&self, factor: usize) -> Self {
        self.rescaled(self.width / factor, self.height / factor)
    }

    /// Intrinsics after resizing the image to `width × height`.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

/// Lifts pixel `(u, v)` at `depth` into the camera frame.
pub fn backproject(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("non-positive depth {depth}")));
    }
    Ok(Vector3::new(
        (u - k.cx) / k.fx * depth,
        (v - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Projects a camera-frame point to continuous pixel coordinates. The result
/// may lie outside the image.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if !(p[2] > 0.0) {
        return Err(Error::BehindCamera { z: p[2] });
    }
    Ok((k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy))
}

/// Camera-frame points with the pixel each one came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub pixel_origin: Vec<(f64, f64)>,
}

impl PointCloud {
    /// Backprojects every pixel of a depth grid.
    pub fn from_depth(depth: &crate::grid::Grid, k: &CameraIntrinsics) -> Result<Self> {
        let mut cloud = PointCloud::default();
        for y in 0..depth.height() {
            for x in 0..depth.width() {
                let (u, v) = (x as f64, y as f64);
                cloud.points.push(backproject(u, v, depth.get(x, y), k)?);
                cloud.pixel_origin.push((u, v));
            }
        }
        Ok(cloud)
    }
}

/// Maps each point by `R·p + t`; pixel origins are kept.
pub fn transform_cloud(c: &PointCloud, t: &Pose6DoF) -> PointCloud {
    let r = t.rotation();
    let tr = t.translation();
    PointCloud {
        points: c.points.iter().map(|p| r * p + tr).collect(),
        pixel_origin: c.pixel_origin.clone(),
    }
}

/// Gradient of a scalar with respect to `[tx, ty, tz, roll, pitch, yaw]`
/// given its gradients with respect to the rotation matrix entries and the
/// translation vector.
pub fn pose_gradient(
    pose: &Pose6DoF,
    d_rotation: &Matrix3<f64>,
    d_translation: &Vector3<f64>,
) -> [f64; 6] {
    let jac = euler_jacobian(&pose.orientation());
    let mut g = [0.0; 6];
    g[0] = d_translation[0];
    g[1] = d_translation[1];
    g[2] = d_translation[2];
    for (i, j) in jac.iter().enumerate() {
        g[3 + i] = d_rotation.component_mul(j).sum();
    }
    g
}
