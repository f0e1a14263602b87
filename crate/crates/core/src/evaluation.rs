//! Trajectory and depth metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose6DoF;
use crate::objective::motion_series;
use crate::par;
use crate::synthesis::DepthMap;

/// How an estimated snippet is aligned to ground truth before the error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Alignment {
    /// Least-squares scale on first-pose-rebased translations.
    #[default]
    Scale,
    /// Rotation and scale (Umeyama, no translation) on rebased translations.
    Similarity,
}

fn rebased_translations(poses: &[Pose6DoF]) -> Vec<Vector3<f64>> {
    let inv = poses[0].inverse();
    poses.iter().map(|p| inv.compose(p).translation()).collect()
}

fn check_pair(est: &[Pose6DoF], gt: &[Pose6DoF]) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::Evaluation(format!(
            "trajectory lengths differ: {} estimated vs {} ground truth",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::InsufficientLength {
            needed: 2,
            got: est.len(),
        });
    }
    Ok(())
}

/// Least-squares scale `Σ⟨e, g⟩ / Σ‖e‖²`, zero when the estimate has no
/// translation.
pub fn ls_scale(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    let num: f64 = est.iter().zip(gt).map(|(e, g)| e.dot(g)).sum();
    let den: f64 = est.iter().map(|e| e.norm_squared()).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn rmse(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    (est.iter().zip(gt).map(|(e, g)| (e - g).norm_squared()).sum::<f64>() / est.len() as f64).sqrt()
}

/// ATE of one snippet: both are re-based to their first pose, the estimate
/// is scaled by the least-squares factor, and the RMSE of translation
/// differences is returned.
pub fn ate_snippet(est: &[Pose6DoF], gt: &[Pose6DoF]) -> Result<f64> {
    ate_snippet_with(est, gt, Alignment::Scale)
}

pub fn ate_snippet_with(est: &[Pose6DoF], gt: &[Pose6DoF], alignment: Alignment) -> Result<f64> {
    check_pair(est, gt)?;
    let e = rebased_translations(est);
    let g = rebased_translations(gt);
    let aligned: Vec<Vector3<f64>> = match alignment {
        Alignment::Scale => {
            let s = ls_scale(&e, &g);
            e.iter().map(|v| v * s).collect()
        }
        Alignment::Similarity => {
            let (r, s) = rotation_scale(&e, &g);
            e.iter().map(|v| r * v * s).collect()
        }
    };
    Ok(rmse(&aligned, &g))
}

/// Rotation and scale minimizing `Σ‖s·R·e − g‖²` about the origin.
fn rotation_scale(e: &[Vector3<f64>], g: &[Vector3<f64>]) -> (Matrix3<f64>, f64) {
    let mut cov = Matrix3::zeros();
    for (a, b) in e.iter().zip(g) {
        cov += b * a.transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let var: f64 = e.iter().map(|v| v.norm_squared()).sum();
    let trace = (Matrix3::from_diagonal(&svd.singular_values) * d).trace();
    let s = if var == 0.0 { 0.0 } else { trace / var };
    (r, s)
}

/// Per-window ATE with aggregate statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct AteReport {
    pub per_snippet: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl AteReport {
    pub fn from_values(per_snippet: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_snippet);
        Self {
            count: per_snippet.len(),
            per_snippet,
            mean,
            std,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("window,ate\n");
        for (i, v) in self.per_snippet.iter().enumerate() {
            s.push_str(&format!("{i},{v:e}\n"));
        }
        s
    }

    /// `mean±std` with three decimals.
    pub fn summary(&self) -> String {
        format_mean_std(self.mean, self.std)
    }
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3}±{std:.3}")
}

/// Mean and population standard deviation (0 and 0 for an empty slice).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// ATE over every window of `snippet_len` consecutive poses (stride 1).
pub fn ate_sequence(est: &[Pose6DoF], gt: &[Pose6DoF], snippet_len: usize) -> Result<AteReport> {
    ate_sequence_with(est, gt, snippet_len, Alignment::Scale)
}

pub fn ate_sequence_with(
    est: &[Pose6DoF],
    gt: &[Pose6DoF],
    snippet_len: usize,
    alignment: Alignment,
) -> Result<AteReport> {
    check_pair(est, gt)?;
    if snippet_len < 2 || est.len() < snippet_len {
        return Err(Error::InsufficientLength {
            needed: snippet_len.max(2),
            got: est.len(),
        });
    }
    let windows = est.len() - snippet_len + 1;
    let values = par::map_range(windows, |i| {
        ate_snippet_with(&est[i..i + snippet_len], &gt[i..i + snippet_len], alignment)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(AteReport::from_values(values))
}

/// Depth error statistics over valid ground-truth pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub pixels: usize,
    pub cap: f64,
    /// Median scale applied to the prediction.
    pub scale: f64,
}

impl DepthReport {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,pixels";

    pub fn csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.pixels
        )
    }
}

pub const DEFAULT_DEPTH_CAP: f64 = 80.0;
pub const MIN_PRED_DEPTH: f64 = 1e-3;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median-scaled depth metrics over pixels with `0 < gt ≤ cap`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Result<DepthReport> {
    pred.grid().check_shape(gt.grid(), "depth metrics")?;
    let pairs: Vec<(f64, f64)> = pred
        .grid()
        .data()
        .iter()
        .zip(gt.grid().data())
        .filter(|(_, &g)| g > 0.0 && g <= cap)
        .map(|(&p, &g)| (p, g))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDomain("no valid ground-truth depth pixels".into()));
    }
    let mut gs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut ps: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let scale = median(&mut gs) / median(&mut ps);
    let n = pairs.len() as f64;
    let (mut abs_rel, mut sq_rel, mut se, mut sle) = (0.0, 0.0, 0.0, 0.0);
    for &(p, g) in &pairs {
        let p = (p * scale).clamp(MIN_PRED_DEPTH, cap);
        let d = p - g;
        abs_rel += d.abs() / g;
        sq_rel += d * d / g;
        se += d * d;
        let l = p.ln() - g.ln();
        sle += l * l;
    }
    Ok(DepthReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (se / n).sqrt(),
        rmse_log: (sle / n).sqrt(),
        pixels: pairs.len(),
        cap,
        scale,
    })
}

/// Speed-curve statistics of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessReport {
    pub v: Vec<f64>,
    pub mean_abs_a: f64,
    pub mean_abs_j: f64,
    pub max_abs_j: f64,
    /// `mean |j| / mean v`.
    pub sawtooth: f64,
}

impl SmoothnessReport {
    pub fn velocity_csv(&self) -> String {
        let mut s = String::from("step,v\n");
        for (i, v) in self.v.iter().enumerate() {
            s.push_str(&format!("{},{v:e}\n", i + 1));
        }
        s
    }
}

/// Acceleration and jerk statistics (with angular weight `chi`).
pub fn smoothness(traj: &[Pose6DoF], chi: f64) -> Result<SmoothnessReport> {
    if traj.len() < 4 {
        return Err(Error::InsufficientLength {
            needed: 4,
            got: traj.len(),
        });
    }
    let m = motion_series(traj, chi)?;
    let mean_abs = |x: &[f64]| x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64;
    let mean_abs_j = mean_abs(&m.j);
    let mean_v = m.v.iter().sum::<f64>() / m.v.len() as f64;
    Ok(SmoothnessReport {
        mean_abs_a: mean_abs(&m.a),
        mean_abs_j,
        max_abs_j: m.j.iter().fold(0.0f64, |a, j| a.max(j.abs())),
        sawtooth: if mean_v > 0.0 { mean_abs_j / mean_v } else { 0.0 },
        v: m.v,
    })
}
