//! Inverse-warping view synthesis with bilinear sampling.
//!
//! For every target pixel the target depth is backprojected, moved into the
//! source camera by the source-from-target transform, and projected; the
//! source image is then sampled there. Samples falling outside the source
//! image are flagged invalid and read as zero.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::grid::Grid;

pub use crate::grid::downsample;

/// Transformed points closer than this to the camera plane are treated as
/// behind the camera.
pub const MIN_POINT_DEPTH: f64 = 1e-6;

/// An intensity image with its capture time.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub intensity: Grid,
    pub timestamp: f64,
}

impl Frame {
    pub fn new(intensity: Grid, timestamp: f64) -> Result<Self> {
        if !intensity.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::Domain("frame intensities must lie in [0, 1]".into()));
        }
        Ok(Self {
            intensity,
            timestamp,
        })
    }

    pub fn width(&self) -> usize {
        self.intensity.width()
    }

    pub fn height(&self) -> usize {
        self.intensity.height()
    }
}

/// Strictly positive per-pixel depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(Grid);

impl DepthMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if !grid.data().iter().all(|&d| d.is_finite() && d > 0.0) {
            return Err(Error::Domain("depth values must be finite and positive".into()));
        }
        Ok(Self(grid))
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(Grid::new(width, height, depth))
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    /// Box-downsampled copy for pyramid level `factor`.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        Ok(Self(downsample(&self.0, factor)?))
    }
}

/// Continuous source coordinates for every target pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    pub u: Grid,
    pub v: Grid,
    /// False where the transformed point is not in front of the source camera.
    pub in_front: Vec<bool>,
    /// Target points expressed in the source camera frame.
    pub transformed: Vec<Vector3<f64>>,
}

/// Output of [`synthesize_view`].
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub synthesized: Grid,
    /// 1 where the sample fell inside the source image, 0 elsewhere.
    pub validity: Grid,
    pub coords: CoordGrid,
    /// `∂value/∂u` of the bilinear sample at each pixel.
    pub grad_u: Grid,
    /// `∂value/∂v` of the bilinear sample at each pixel.
    pub grad_v: Grid,
}

impl WarpResult {
    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.validity.data()[i] != 0.0
    }
}

/// One bilinear lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub du: f64,
    pub dv: f64,
    pub valid: bool,
}

impl Sample {
    const INVALID: Sample = Sample {
        value: 0.0,
        du: 0.0,
        dv: 0.0,
        valid: false,
    };
}

/// Bilinear interpolation with its exact piecewise-linear gradient.
///
/// Valid only on `[0, W-1] × [0, H-1]`; at an exact integer coordinate the
/// gradient is taken from the cell to the right/below.
pub fn bilinear_sample(img: &Grid, u: f64, v: f64) -> Sample {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Sample::INVALID;
    }
    let (umax, vmax) = ((w - 1) as f64, (h - 1) as f64);
    if !(u >= 0.0 && u <= umax && v >= 0.0 && v <= vmax) {
        return Sample::INVALID;
    }
    let (x0, ax) = cell(u, w);
    let (y0, ay) = cell(v, h);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let data = img.data();
    let i00 = data[y0 * w + x0];
    let i10 = data[y0 * w + x1];
    let i01 = data[y1 * w + x0];
    let i11 = data[y1 * w + x1];
    let top = i00 + ax * (i10 - i00);
    let bottom = i01 + ax * (i11 - i01);
    Sample {
        value: top + ay * (bottom - top),
        du: (1.0 - ay) * (i10 - i00) + ay * (i11 - i01),
        dv: bottom - top,
        valid: true,
    }
}

/// Bilinear corner indices and weights for a coordinate already known to be
/// in range; used to scatter gradients back onto the sampled grid.
pub fn bilinear_taps(width: usize, height: usize, u: f64, v: f64) -> [(usize, f64); 4] {
    let (x0, ax) = cell(u, width);
    let (y0, ay) = cell(v, height);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    [
        (y0 * width + x0, (1.0 - ax) * (1.0 - ay)),
        (y0 * width + x1, ax * (1.0 - ay)),
        (y1 * width + x0, (1.0 - ax) * ay),
        (y1 * width + x1, ax * ay),
    ]
}

#[inline]
fn cell(c: f64, n: usize) -> (usize, f64) {
    if n < 2 {
        return (0, 0.0);
    }
    let i = (c.floor() as usize).min(n - 2);
    (i, c - i as f64)
}

/// A rigid transform in matrix form, used on hot paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_pose(p: &Pose6DoF) -> Self {
        if p.is_identity() {
            return Self::identity();
        }
        Self {
            rotation: p.rotation(),
            translation: p.translation(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// `a⁻¹ ∘ b`.
    pub fn relative(a: &RigidTransform, b: &RigidTransform) -> Self {
        let rt = a.rotation.transpose();
        Self {
            rotation: rt * b.rotation,
            translation: rt * (b.translation - a.translation),
        }
    }
}

/// Source coordinates of every target pixel, with target and source possibly
/// using different intrinsics.
pub fn warp_coords_between(
    depth: &Grid,
    target_k: &CameraIntrinsics,
    source_k: &CameraIntrinsics,
    x: &RigidTransform,
) -> CoordGrid {
    let (w, h) = (depth.width(), depth.height());
    let n = w * h;
    let mut u = Grid::zeros(w, h);
    let mut v = Grid::zeros(w, h);
    let mut in_front = vec![true; n];
    let mut transformed = Vec::with_capacity(n);
    let identity = x.is_identity() && target_k == source_k;
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            let d = depth.data()[i];
            let p = Vector3::new(
                (px as f64 - target_k.cx) / target_k.fx * d,
                (py as f64 - target_k.cy) / target_k.fy * d,
                d,
            );
            if identity {
                transformed.push(p);
                u.data_mut()[i] = px as f64;
                v.data_mut()[i] = py as f64;
                continue;
            }
            let q = x.rotation * p + x.translation;
            transformed.push(q);
            if q[2] <= MIN_POINT_DEPTH {
                in_front[i] = false;
                u.data_mut()[i] = f64::NAN;
                v.data_mut()[i] = f64::NAN;
                continue;
            }
            u.data_mut()[i] = source_k.fx * q[0] / q[2] + source_k.cx;
            v.data_mut()[i] = source_k.fy * q[1] / q[2] + source_k.cy;
        }
    }
    CoordGrid {
        u,
        v,
        in_front,
        transformed,
    }
}

/// Continuous source coordinates for each target pixel under the
/// source-from-target transform `t`.
///
/// Pixels whose transformed point is not in front of the camera are flagged
/// in `in_front` and carry NaN coordinates. The identity transform returns
/// the pixel grid exactly.
pub fn warp_coords(depth: &DepthMap, t: &Pose6DoF, k: &CameraIntrinsics) -> CoordGrid {
    warp_coords_between(depth.grid(), k, k, &RigidTransform::from_pose(t))
}

/// Samples `src` at precomputed coordinates.
pub fn sample_at(src: &Grid, coords: CoordGrid) -> WarpResult {
    let (w, h) = (coords.u.width(), coords.u.height());
    let mut synthesized = Grid::zeros(w, h);
    let mut validity = Grid::zeros(w, h);
    let mut grad_u = Grid::zeros(w, h);
    let mut grad_v = Grid::zeros(w, h);
    for i in 0..w * h {
        if !coords.in_front[i] {
            continue;
        }
        let s = bilinear_sample(src, coords.u.data()[i], coords.v.data()[i]);
        if s.valid {
            synthesized.data_mut()[i] = s.value;
            validity.data_mut()[i] = 1.0;
            grad_u.data_mut()[i] = s.du;
            grad_v.data_mut()[i] = s.dv;
        }
    }
    WarpResult {
        synthesized,
        validity,
        coords,
        grad_u,
        grad_v,
    }
}

/// Warps `src` into the target view defined by `depth` and the
/// source-from-target pose `t`.
pub fn synthesize_view(
    src: &Frame,
    depth: &DepthMap,
    t: &Pose6DoF,
    k: &CameraIntrinsics,
) -> Result<WarpResult> {
    check_dims(&src.intensity, k, "source frame")?;
    check_dims(depth.grid(), k, "depth map")?;
    Ok(sample_at(&src.intensity, warp_coords(depth, t, k)))
}

pub(crate) fn check_dims(g: &Grid, k: &CameraIntrinsics, what: &str) -> Result<()> {
    if g.width() != k.width || g.height() != k.height {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, intrinsics expect {}x{}",
            g.width(),
            g.height(),
            k.width,
            k.height
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(40.0, 40.0, 15.5, 7.5, 32, 16).unwrap()
    }

    fn texture(w: usize, h: usize) -> Grid {
        Grid::from_fn(w, h, |x, y| {
            0.5 + 0.25 * (0.37 * x as f64 + 0.2).sin() * (0.51 * y as f64 + 1.0).cos()
        })
    }

    #[test]
    fn integer_coordinates_return_pixels() {
        let img = texture(5, 4);
        for y in 0..4 {
            for x in 0..5 {
                let s = bilinear_sample(&img, x as f64, y as f64);
                assert!(s.valid);
                assert_eq!(s.value, img.get(x, y));
            }
        }
    }

    #[test]
    fn bilinear_center_of_cell() {
        let img = Grid::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&img, 0.5, 0.5).value, 1.5);
        let out = bilinear_sample(&img, -0.1, 0.0);
        assert!(!out.valid);
        assert_eq!(out.value, 0.0);
        assert!(!bilinear_sample(&img, 0.0, f64::NAN).valid);
    }

    #[test]
    fn identity_warp_is_exact() {
        let k = k();
        let depth = DepthMap::new(Grid::from_fn(32, 16, |x, y| 1.0 + 0.37 * x as f64 + 0.1 * y as f64)).unwrap();
        let c = warp_coords(&depth, &Pose6DoF::identity(), &k);
        for y in 0..16 {
            for x in 0..32 {
                assert_eq!(c.u.get(x, y), x as f64);
                assert_eq!(c.v.get(x, y), y as f64);
            }
        }
        let src = Frame::new(texture(32, 16), 0.0).unwrap();
        let w = synthesize_view(&src, &depth, &Pose6DoF::identity(), &k).unwrap();
        assert_eq!(w.synthesized, src.intensity);
        assert!(w.validity.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn lateral_translation_shifts_uniformly() {
        let k = k();
        let (d, delta) = (4.0, 0.05);
        let depth = DepthMap::constant(32, 16, d).unwrap();
        let c = warp_coords(&depth, &Pose6DoF::from_translation(Vector3::new(-delta, 0.0, 0.0)), &k);
        // Source-from-target translation −δ: the camera moved by +δ.
        for y in 0..16 {
            for x in 0..32 {
                let expected = x as f64 - k.fx * delta / d;
                assert!((c.u.get(x, y) - expected).abs() < 1e-12);
                assert!((c.v.get(x, y) - y as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_motion_contracts_toward_principal_point() {
        let k = k();
        let depth = DepthMap::constant(32, 16, 5.0).unwrap();
        // Source camera behind the target: target points are farther away.
        let c = warp_coords(&depth, &Pose6DoF::from_translation(Vector3::new(0.0, 0.0, 1.0)), &k);
        for y in 0..16 {
            for x in 0..32 {
                let (du0, dv0) = (x as f64 - k.cx, y as f64 - k.cy);
                let (du1, dv1) = (c.u.get(x, y) - k.cx, c.v.get(x, y) - k.cy);
                assert!((du1 - du0 * 5.0 / 6.0).abs() < 1e-12);
                assert!((dv1 - dv0 * 5.0 / 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_fraction_grows_with_translation() {
        let k = k();
        let src = Frame::new(texture(32, 16), 0.0).unwrap();
        let depth = DepthMap::constant(32, 16, 3.0).unwrap();
        let mut last = 0.0;
        for (i, m) in [0.2, 0.5, 1.0, 1.5, 2.0].iter().enumerate() {
            let w = synthesize_view(&src, &depth, &Pose6DoF::from_translation(Vector3::new(0.0, 0.0, -m)), &k).unwrap();
            let invalid = 1.0 - w.validity.mean();
            assert!(invalid > last || (i == 0 && invalid > 0.0), "{invalid} after {last}");
            last = invalid;
        }
    }

    #[test]
    fn behind_camera_flagged() {
        let k = k();
        let depth = DepthMap::constant(32, 16, 1.0).unwrap();
        let c = warp_coords(&depth, &Pose6DoF::from_translation(Vector3::new(0.0, 0.0, -2.0)), &k);
        assert!(c.in_front.iter().all(|f| !f));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let k = k();
        let src = Frame::new(texture(16, 16), 0.0).unwrap();
        let depth = DepthMap::constant(32, 16, 3.0).unwrap();
        assert!(matches!(
            synthesize_view(&src, &depth, &Pose6DoF::identity(), &k),
            Err(Error::Dimension(_))
        ));
    }

    proptest! {
        #[test]
        fn bilinear_gradient_matches_central_differences(u in 0.0..4.0f64, v in 0.0..3.0f64) {
            let fu = u - u.floor();
            let fv = v - v.floor();
            prop_assume!(fu > 0.05 && fu < 0.95 && fv > 0.05 && fv < 0.95);
            let img = texture(5, 4);
            let s = bilinear_sample(&img, u, v);
            let h = 1e-4;
            let du = (bilinear_sample(&img, u + h, v).value - bilinear_sample(&img, u - h, v).value) / (2.0 * h);
            let dv = (bilinear_sample(&img, u, v + h).value - bilinear_sample(&img, u, v - h).value) / (2.0 * h);
            prop_assert!((du - s.du).abs() <= 1e-5 * du.abs().max(1e-3));
            prop_assert!((dv - s.dv).abs() <= 1e-5 * dv.abs().max(1e-3));
        }

        #[test]
        fn bilinear_is_lipschitz(u in 0.0..3.0f64, v in 0.0..3.0f64, eps in 0.0..1.0f64) {
            let img = texture(5, 4);
            let (lo, hi) = img.min_max();
            let a = bilinear_sample(&img, u, v).value;
            let b = bilinear_sample(&img, u + eps, v).value;
            prop_assert!((a - b).abs() <= eps * (hi - lo) + 1e-12);
        }

        #[test]
        fn depth_translation_scaling_is_invisible(
            lambda in 0.1..10.0f64,
            tx in -0.3..0.3f64, tz in -0.3..0.3f64, yaw in -0.1..0.1f64,
        ) {
            let k = k();
            let depth = Grid::from_fn(32, 16, |x, y| 2.0 + 0.1 * x as f64 + 0.2 * y as f64);
            let pose = Pose6DoF::new(Vector3::new(tx, 0.05, tz), Vector3::new(0.01, yaw, -0.02));
            let scaled_pose = Pose6DoF::new(pose.translation() * lambda, pose.orientation());
            let a = warp_coords(&DepthMap::new(depth.clone()).unwrap(), &pose, &k);
            let b = warp_coords(&DepthMap::new(depth.map(|d| d * lambda)).unwrap(), &scaled_pose, &k);
            for i in 0..depth.len() {
                prop_assert!((a.u.data()[i] - b.u.data()[i]).abs() < 1e-9);
                prop_assert!((a.v.data()[i] - b.v.data()[i]).abs() < 1e-9);
            }
        }
    }
}
