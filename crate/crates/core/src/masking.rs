//! Dynamic hard-edge masks, the explainability field, and the mask loss.
//!
//! The hard mask zeroes a border band whose width grows with the camera's
//! speed; the side bands additionally widen on the side scene content leaves
//! the view when steering. The explainability field is a per-pixel logistic
//! weight that the optimizer is free to lower where the photometric model
//! does not hold, held near one by a cross-entropy penalty.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::grid::Grid;

/// Coefficients of the border-width rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DhemParams {
    /// Width per unit of speed, as a fraction of the image dimension.
    pub k_v: f64,
    /// Extra side width per radian-per-frame of steering, as a fraction of
    /// the image width.
    pub k_s: f64,
    /// Cap on each width as a fraction of the image dimension.
    pub w_max: f64,
}

impl Default for DhemParams {
    fn default() -> Self {
        Self {
            k_v: 0.02,
            k_s: 0.5,
            w_max: 0.25,
        }
    }
}

/// Border band widths in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeWidths {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Binary mask that is zero on the border band and one elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct HardEdgeMask {
    grid: Grid,
    widths: EdgeWidths,
}

impl HardEdgeMask {
    pub fn from_widths(width: usize, height: usize, widths: EdgeWidths) -> Self {
        let grid = Grid::from_fn(width, height, |x, y| {
            let blocked = y < widths.top
                || y + widths.bottom >= height
                || x < widths.left
                || x + widths.right >= width;
            if blocked {
                0.0
            } else {
                1.0
            }
        });
        Self { grid, widths }
    }

    pub fn all_ones(width: usize, height: usize) -> Self {
        Self::from_widths(width, height, EdgeWidths::default())
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn widths(&self) -> EdgeWidths {
        self.widths
    }

    /// Number of zeroed pixels.
    pub fn masked_count(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v == 0.0).count()
    }
}

/// Builds the hard edge mask for speed `v` (scene units per frame) and
/// steering rate `yaw_rate` (radians per frame, positive for a leftward turn,
/// which widens the right band).
pub fn build_dhem(
    v: f64,
    yaw_rate: f64,
    k: &CameraIntrinsics,
    params: &DhemParams,
) -> Result<HardEdgeMask> {
    if !(v >= 0.0) || !yaw_rate.is_finite() {
        return Err(Error::Domain(format!(
            "speed must be non-negative and finite (v = {v}, yaw_rate = {yaw_rate})"
        )));
    }
    let (w, h) = (k.width as f64, k.height as f64);
    let hard_cap = k.width.min(k.height) / 4;
    let width = |raw: f64, dim: f64| -> usize {
        let cap = ((params.w_max * dim).floor().max(0.0) as usize).min(hard_cap);
        (raw.round().max(0.0) as usize).min(cap)
    };
    let base_h = params.k_v * v * h;
    let base_w = params.k_v * v * w;
    let widths = EdgeWidths {
        top: width(base_h, h),
        bottom: width(base_h, h),
        left: width(base_w + params.k_s * (-yaw_rate).max(0.0) * w, w),
        right: width(base_w + params.k_s * yaw_rate.max(0.0) * w, w),
    };
    Ok(HardEdgeMask::from_widths(k.width, k.height, widths))
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-pixel soft weights parameterized by unconstrained logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplainabilityField {
    logits: Grid,
}

impl ExplainabilityField {
    pub fn new(logits: Grid) -> Result<Self> {
        if !logits.is_finite() {
            return Err(Error::Domain("explainability logits must be finite".into()));
        }
        Ok(Self { logits })
    }

    pub fn constant(width: usize, height: usize, logit: f64) -> Self {
        Self {
            logits: Grid::new(width, height, logit),
        }
    }

    #[inline]
    pub fn logits(&self) -> &Grid {
        &self.logits
    }

    #[inline]
    pub fn logits_mut(&mut self) -> &mut Grid {
        &mut self.logits
    }

    /// Weights in `(0, 1)`.
    pub fn values(&self) -> Grid {
        self.logits.map(logistic)
    }
}

/// Elementwise product of a hard mask and soft weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedMask {
    pub grid: Grid,
}

pub fn combine(hard: &HardEdgeMask, soft: &ExplainabilityField) -> Result<CombinedMask> {
    hard.grid.check_shape(&soft.logits, "combine")?;
    Ok(CombinedMask {
        grid: hard.grid.zip_map(&soft.logits, |h, l| h * logistic(l)),
    })
}

/// Pulls a gradient with respect to the combined mask back onto the soft
/// logits. The hard mask is a constant.
pub fn combine_backward(hard: &Grid, soft: &ExplainabilityField, d_combined: &Grid) -> Grid {
    Grid::from_fn(hard.width(), hard.height(), |x, y| {
        let s = logistic(soft.logits.get(x, y));
        d_combined.get(x, y) * hard.get(x, y) * s * (1.0 - s)
    })
}

/// Mean binary cross-entropy of the soft weights against an all-ones target,
/// `mean(−ln σ(logit))`, with its exact gradient with respect to the logits.
pub fn mask_loss(soft: &ExplainabilityField) -> (f64, Grid) {
    let n = soft.logits.len().max(1) as f64;
    let value = soft.logits.data().iter().map(|&l| softplus(-l)).sum::<f64>() / n;
    let grad = soft.logits.map(|l| -(1.0 - logistic(l)) / n);
    (value, grad)
}

/// Writes a mask as an 8-bit grayscale PNG (value 1 → 255).
pub fn write_mask_png(grid: &Grid, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = grid
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(grid.width() as u32, grid.height() as u32, bytes)
        .ok_or_else(|| Error::Dimension("mask buffer size".into()))?;
    img.save(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    #[test]
    fn zero_speed_gives_all_ones() {
        let m = build_dhem(0.0, 0.0, &k(64, 32), &DhemParams::default()).unwrap();
        assert_eq!(m.widths(), EdgeWidths::default());
        assert!(m.grid().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn top_bottom_width_example() {
        let p = DhemParams {
            k_v: 0.05,
            ..DhemParams::default()
        };
        let m = build_dhem(1.0, 0.0, &k(416, 128), &p).unwrap();
        assert_eq!(m.widths().top, 6);
        assert_eq!(m.widths().bottom, 6);
        // Band rows are zero, the first interior row is one.
        assert_eq!(m.grid().get(200, 5), 0.0);
        assert_eq!(m.grid().get(200, 6), m.grid().get(200, 64));
        assert_eq!(m.grid().get(200, 122), 0.0);
    }

    #[test]
    fn steering_widens_exit_side() {
        let kk = k(64, 32);
        let p = DhemParams::default();
        let left_turn = build_dhem(2.0, 0.1, &kk, &p).unwrap().widths();
        assert!(left_turn.right > left_turn.left);
        let right_turn = build_dhem(2.0, -0.1, &kk, &p).unwrap().widths();
        assert!(right_turn.left > right_turn.right);
        assert_eq!(left_turn.right, right_turn.left);
    }

    #[test]
    fn widths_respect_caps() {
        let kk = k(64, 32);
        let m = build_dhem(1e6, 5.0, &kk, &DhemParams::default()).unwrap();
        let cap = 32 / 4;
        let w = m.widths();
        for x in [w.top, w.bottom, w.left, w.right] {
            assert!(x <= cap);
        }
    }

    #[test]
    fn negative_speed_rejected() {
        assert!(build_dhem(-0.1, 0.0, &k(64, 32), &DhemParams::default()).is_err());
    }

    #[test]
    fn masked_count_monotone_in_speed() {
        let kk = k(64, 32);
        for yaw in [-0.05, 0.0, 0.03] {
            let mut last = 0;
            for i in 0..20 {
                let v = i as f64 * 0.5;
                let c = build_dhem(v, yaw, &kk, &DhemParams::default())
                    .unwrap()
                    .masked_count();
                assert!(c >= last);
                last = c;
            }
        }
    }

    #[test]
    fn combine_examples() {
        let hard = HardEdgeMask::all_ones(8, 4);
        let soft = ExplainabilityField::constant(8, 4, 40.0);
        let c = combine(&hard, &soft).unwrap();
        assert!(c.grid.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let band = HardEdgeMask::from_widths(8, 4, EdgeWidths { top: 1, bottom: 0, left: 2, right: 0 });
        let soft = ExplainabilityField::new(Grid::from_fn(8, 4, |x, y| x as f64 - y as f64)).unwrap();
        let c = combine(&band, &soft).unwrap();
        for y in 0..4 {
            for x in 0..8 {
                let expected = band.grid().get(x, y) * soft.values().get(x, y);
                assert_eq!(c.grid.get(x, y), expected);
                if y < 1 || x < 2 {
                    assert_eq!(c.grid.get(x, y), 0.0);
                }
                assert!(c.grid.get(x, y) <= band.grid().get(x, y).min(soft.values().get(x, y)));
            }
        }
        assert!(combine(&HardEdgeMask::all_ones(4, 4), &soft).is_err());
    }

    #[test]
    fn combine_backward_zero_under_band() {
        let band = HardEdgeMask::from_widths(8, 4, EdgeWidths { top: 1, bottom: 1, left: 1, right: 1 });
        let soft = ExplainabilityField::constant(8, 4, 0.3);
        let g = combine_backward(band.grid(), &soft, &Grid::new(8, 4, 1.0));
        for y in 0..4 {
            for x in 0..8 {
                assert_eq!(g.get(x, y) == 0.0, band.grid().get(x, y) == 0.0);
            }
        }
    }

    #[test]
    fn mask_loss_values() {
        let (l, _) = mask_loss(&ExplainabilityField::constant(5, 3, 20.0));
        assert!(l < 1e-8);
        let (l, g) = mask_loss(&ExplainabilityField::constant(5, 3, 0.0));
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn mask_loss_gradient_matches_finite_differences() {
        let logits = Grid::from_fn(6, 4, |x, y| ((x * 5 + y * 3) % 7) as f64 - 3.0 + 0.1 * x as f64);
        let field = ExplainabilityField::new(logits.clone()).unwrap();
        let (_, g) = mask_loss(&field);
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let fp = mask_loss(&ExplainabilityField::new(p).unwrap()).0;
            let fm = mask_loss(&ExplainabilityField::new(m).unwrap()).0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() <= 1e-6 * g.data()[i].abs(), "{fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn png_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let m = HardEdgeMask::from_widths(8, 4, EdgeWidths { top: 1, ..Default::default() });
        write_mask_png(m.grid(), &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.get_pixel(0, 0)[0], 0);
        assert_eq!(img.get_pixel(0, 2)[0], 255);
    }
}
