//! Inertia loss: penalizes "acceleration" and jerk magnitudes that exceed
//! typical road-vehicle values along a pose sequence.
//!
//! Speeds are per-frame displacement norms, angular speeds are norms of
//! wrapped Euler-angle differences, the acceleration mixes both with weight
//! `chi`, and jerk is the difference of consecutive accelerations. Each is
//! passed through the hinge ratio `max(0, (|x| − typ) / |x|)` and the hinged
//! values are summed over time.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angles, Pose6DoF};

/// Parameters of the inertia loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InertiaParams {
    /// Weight on the angular part of the acceleration.
    pub chi: f64,
    /// Typical acceleration magnitude, scene units per frame².
    pub a_typ: f64,
    /// Typical jerk magnitude, scene units per frame³.
    pub j_typ: f64,
    /// Use `|x|` in the ratio denominator (penalizes both signs). When false
    /// the signed value is used, which exempts large negative values.
    pub symmetric: bool,
}

impl Default for InertiaParams {
    fn default() -> Self {
        Self {
            chi: 100.0,
            a_typ: 2.0,
            j_typ: 0.5,
            symmetric: true,
        }
    }
}

impl InertiaParams {
    pub fn validate(&self) -> Result<()> {
        if self.chi > 0.0 && self.a_typ > 0.0 && self.j_typ > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "inertia parameters must be positive: {self:?}"
            )))
        }
    }
}

/// Kinematic series derived from a pose sequence. With `n` poses, `v` and
/// `phi_rate` have `n − 1` entries (time index 1..n−1), `a` has `n − 2`
/// (from index 2) and `j` has `n − 3` (from index 3).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MotionSeries {
    pub v: Vec<f64>,
    pub phi_rate: Vec<f64>,
    pub a: Vec<f64>,
    pub j: Vec<f64>,
}

/// Per-step translational and angular speeds plus the derived acceleration
/// and jerk series.
pub fn motion_series(poses: &[Pose6DoF], chi: f64) -> Result<MotionSeries> {
    if poses.len() < 2 {
        return Err(Error::InsufficientLength {
            needed: 2,
            got: poses.len(),
        });
    }
    let v: Vec<f64> = poses
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .collect();
    let phi_rate: Vec<f64> = poses
        .windows(2)
        .map(|w| euler_step(&w[0], &w[1]).norm())
        .collect();
    let a: Vec<f64> = (1..v.len())
        .map(|i| (v[i] - v[i - 1]) + chi * (phi_rate[i] - phi_rate[i - 1]))
        .collect();
    let j: Vec<f64> = a.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(MotionSeries { v, phi_rate, a, j })
}

fn euler_step(from: &Pose6DoF, to: &Pose6DoF) -> Vector3<f64> {
    wrap_angles(&(to.orientation() - from.orientation()))
}

/// Hinge ratio and its derivative with respect to `x`.
#[inline]
pub fn hinge_ratio(x: f64, typ: f64, symmetric: bool) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 0.0);
    }
    let denom = if symmetric { x.abs() } else { x };
    let r = (x.abs() - typ) / denom;
    if r > 0.0 {
        // d/dx of 1 − typ/|x| is typ·sign(x)/x²; of (|x| − typ)/x it is typ/x².
        let d = if symmetric {
            typ * x.signum() / (x * x)
        } else {
            typ / (x * x)
        };
        (r, d)
    } else {
        (0.0, 0.0)
    }
}

/// Inertia loss value and gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct InertiaLoss {
    pub value: f64,
    /// Gradient with respect to each pose's `[tx, ty, tz, roll, pitch, yaw]`.
    pub gradient: Vec<[f64; 6]>,
    /// Fingerprint of the active hinge pattern and sign decisions.
    pub signature: u64,
}

/// Evaluates the inertia loss over absolute poses (at least four).
pub fn inertia_loss(poses: &[Pose6DoF], p: &InertiaParams) -> Result<InertiaLoss> {
    if poses.len() < 4 {
        return Err(Error::InsufficientLength {
            needed: 4,
            got: poses.len(),
        });
    }
    let n = poses.len();
    let steps: Vec<Vector3<f64>> = poses
        .windows(2)
        .map(|w| w[1].translation() - w[0].translation())
        .collect();
    let turns: Vec<Vector3<f64>> = poses.windows(2).map(|w| euler_step(&w[0], &w[1])).collect();
    let v: Vec<f64> = steps.iter().map(|s| s.norm()).collect();
    let w: Vec<f64> = turns.iter().map(|s| s.norm()).collect();
    let a: Vec<f64> = (1..v.len())
        .map(|i| (v[i] - v[i - 1]) + p.chi * (w[i] - w[i - 1]))
        .collect();
    let j: Vec<f64> = a.windows(2).map(|x| x[1] - x[0]).collect();

    let mut sig = Fingerprint::default();
    let mut ga = vec![0.0; a.len()];
    let mut gj = vec![0.0; j.len()];
    let mut value = 0.0;
    for k in 0..a.len() {
        let (ra, da) = hinge_ratio(a[k], p.a_typ, p.symmetric);
        let (rj, dj) = if k >= 1 {
            hinge_ratio(j[k - 1], p.j_typ, p.symmetric)
        } else {
            (0.0, 0.0)
        };
        sig.push(ra > 0.0);
        sig.push(a[k] > 0.0);
        if k >= 1 {
            sig.push(rj > 0.0);
            sig.push(j[k - 1] > 0.0);
        }
        // Both ratios are non-negative, so the outer absolute value is the
        // identity wherever it is differentiable.
        value += (ra + rj).abs();
        ga[k] += da;
        if k >= 1 {
            gj[k - 1] += dj;
        }
    }
    for m in 0..j.len() {
        ga[m + 1] += gj[m];
        ga[m] -= gj[m];
    }
    let mut gv = vec![0.0; v.len()];
    let mut gw = vec![0.0; w.len()];
    for k in 0..a.len() {
        gv[k + 1] += ga[k];
        gv[k] -= ga[k];
        gw[k + 1] += p.chi * ga[k];
        gw[k] -= p.chi * ga[k];
    }
    let mut gradient = vec![[0.0; 6]; n];
    for i in 0..v.len() {
        sig.push(v[i] > 0.0);
        sig.push(w[i] > 0.0);
        if v[i] > 0.0 {
            let d = steps[i] * (gv[i] / v[i]);
            for c in 0..3 {
                gradient[i + 1][c] += d[c];
                gradient[i][c] -= d[c];
            }
        }
        if w[i] > 0.0 {
            let d = turns[i] * (gw[i] / w[i]);
            for c in 0..3 {
                gradient[i + 1][3 + c] += d[c];
                gradient[i][3 + c] -= d[c];
            }
        }
    }
    Ok(InertiaLoss {
        value,
        gradient,
        signature: sig.finish(),
    })
}

/// Order-sensitive hash of discrete branch decisions, used to detect when a
/// finite-difference probe crosses a kink.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    #[inline]
    pub(crate) fn push_u64(&mut self, x: u64) {
        self.0 ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        self.0 ^= self.0 >> 29;
    }

    #[inline]
    pub(crate) fn push(&mut self, b: bool) {
        self.push_u64(b as u64);
    }

    #[inline]
    pub(crate) fn push_i64(&mut self, x: i64) {
        self.push_u64(x as u64);
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}
