//! Point-to-point 3D alignment between the target cloud moved into the source
//! camera and the source cloud sampled at the warped coordinates.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::grid::Grid;
use crate::synthesis::{bilinear_sample, bilinear_taps, CoordGrid, RigidTransform};

use super::photometric::coord_to_point_gradient;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentLoss {
    pub value: f64,
    pub d_depth_target: Grid,
    pub d_depth_source: Grid,
    /// Gradient with respect to the source-from-target rotation matrix.
    pub d_rotation: Matrix3<f64>,
    pub d_translation: Vector3<f64>,
    /// Gradient with respect to the per-pixel weight.
    pub d_weight: Grid,
    /// Number of target pixels with a valid source sample.
    pub valid: usize,
}

/// Mean over target pixels of `weight · ‖Q − P_s(u′, v′)‖ / Q_z` with
/// `Q = X·P_t`, where `P_t` is backprojected from `depth_t`, `(u′, v′)` are
/// the warped coordinates of `Q` in the source view and `P_s` is
/// backprojected from `depth_s` bilinearly interpolated there. Dividing by
/// the depth of `Q` makes the term invariant to a common scaling of depths
/// and translation. Pixels without a valid source sample contribute zero.
pub fn alignment_3d_loss(
    depth_t: &Grid,
    depth_s: &Grid,
    k: &CameraIntrinsics,
    x: &RigidTransform,
    coords: &CoordGrid,
    weight: Option<&Grid>,
) -> Result<AlignmentLoss> {
    depth_t.check_shape(depth_s, "alignment depths")?;
    depth_t.check_shape(&coords.u, "alignment coordinates")?;
    if let Some(w) = weight {
        depth_t.check_shape(w, "alignment weight")?;
    }
    if k.width != depth_t.width() || k.height != depth_t.height() {
        return Err(Error::Dimension(format!(
            "alignment intrinsics expect {}x{}, depth is {}x{}",
            k.width,
            k.height,
            depth_t.width(),
            depth_t.height()
        )));
    }
    let (w, h) = (depth_t.width(), depth_t.height());
    let n = (w * h).max(1) as f64;
    let mut out = AlignmentLoss {
        value: 0.0,
        d_depth_target: Grid::zeros(w, h),
        d_depth_source: Grid::zeros(w, h),
        d_rotation: Matrix3::zeros(),
        d_translation: Vector3::zeros(),
        d_weight: Grid::zeros(w, h),
        valid: 0,
    };
    let rt = x.rotation.transpose();
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            if !coords.in_front[i] {
                continue;
            }
            let (u, v) = (coords.u.data()[i], coords.v.data()[i]);
            let s = bilinear_sample(depth_s, u, v);
            if !s.valid {
                continue;
            }
            out.valid += 1;
            let q = coords.transformed[i];
            let (ru, rv) = ((u - k.cx) / k.fx, (v - k.cy) / k.fy);
            let ps = Vector3::new(ru * s.value, rv * s.value, s.value);
            let e = q - ps;
            let dist = e.norm();
            let rel = dist / q.z;
            let wt = weight.map_or(1.0, |g| g.data()[i]);
            out.value += wt * rel;
            out.d_weight.data_mut()[i] = rel / n;
            if dist == 0.0 || wt == 0.0 {
                continue;
            }
            let g = e * (wt / (n * dist * q.z));
            // ∂P_s/∂u, ∂P_s/∂v and ∂P_s/∂d_s.
            let dps_du = Vector3::new(s.value / k.fx + ru * s.du, rv * s.du, s.du);
            let dps_dv = Vector3::new(ru * s.dv, s.value / k.fy + rv * s.dv, s.dv);
            let dps_dd = Vector3::new(ru, rv, 1.0);
            let gu = -g.dot(&dps_du);
            let gv = -g.dot(&dps_dv);
            let gd = -g.dot(&dps_dd);
            for (idx, wgt) in bilinear_taps(w, h, u, v) {
                out.d_depth_source.data_mut()[idx] += gd * wgt;
            }
            let mut d_q = g + coord_to_point_gradient(&q, k, gu, gv);
            d_q.z -= wt * rel / (n * q.z);
            let ray = Vector3::new((px as f64 - k.cx) / k.fx, (py as f64 - k.cy) / k.fy, 1.0);
            let p = ray * depth_t.data()[i];
            out.d_rotation += d_q * p.transpose();
            out.d_translation += d_q;
            out.d_depth_target.data_mut()[i] = (rt * d_q).dot(&ray);
        }
    }
    out.value /= n;
    Ok(out)
}
