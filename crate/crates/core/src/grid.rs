//! Dense row-major scalar grids used for images, depth maps and masks.

use crate::error::{Error, Result};

/// A `width × height` grid of `f64` values stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, 0.0)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_shape(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        debug_assert!(self.same_shape(other));
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Adds `other` elementwise into `self`.
    pub fn add_assign(&mut self, other: &Grid) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts the `width × height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Grid> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Dimension(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Grid::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }
}

fn check_factor(grid: &Grid, factor: usize) -> Result<()> {
    if !matches!(factor, 1 | 2 | 4 | 8) {
        return Err(Error::Domain(format!(
            "downsample factor {factor} not in {{1, 2, 4, 8}}"
        )));
    }
    if !grid.width.is_multiple_of(factor) || !grid.height.is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "{}x{} not divisible by {factor}",
            grid.width, grid.height
        )));
    }
    Ok(())
}

fn pool(grid: &Grid, factor: usize, reduce: impl Fn(&mut dyn Iterator<Item = f64>) -> f64) -> Grid {
    let w = grid.width / factor;
    let h = grid.height / factor;
    Grid::from_fn(w, h, |cx, cy| {
        let mut it = (0..factor).flat_map(|dy| {
            let y = cy * factor + dy;
            (0..factor).map(move |dx| (cx * factor + dx, y))
        })
        .map(|(x, y)| grid.get(x, y));
        reduce(&mut it)
    })
}

/// Non-overlapping box average by a power-of-two factor.
pub fn downsample(grid: &Grid, factor: usize) -> Result<Grid> {
    check_factor(grid, factor)?;
    if factor == 1 {
        return Ok(grid.clone());
    }
    let inv = 1.0 / (factor * factor) as f64;
    Ok(pool(grid, factor, |it| it.sum::<f64>() * inv))
}

/// Non-overlapping minimum pool; a coarse cell is blocked if any fine cell is.
pub fn min_pool(grid: &Grid, factor: usize) -> Result<Grid> {
    check_factor(grid, factor)?;
    if factor == 1 {
        return Ok(grid.clone());
    }
    Ok(pool(grid, factor, |it| it.fold(f64::INFINITY, f64::min)))
}

/// Adjoint of [`downsample`]: spreads each coarse value over its block with
/// weight `1 / factor²`.
pub fn downsample_adjoint(coarse: &Grid, factor: usize) -> Grid {
    if factor == 1 {
        return coarse.clone();
    }
    let inv = 1.0 / (factor * factor) as f64;
    Grid::from_fn(coarse.width * factor, coarse.height * factor, |x, y| {
        coarse.get(x / factor, y / factor) * inv
    })
}

/// Area-weighted resampling to arbitrary dimensions (box filter).
pub fn resize_area(grid: &Grid, width: usize, height: usize) -> Result<Grid> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension("resize target has a zero dimension".into()));
    }
    if width == grid.width && height == grid.height {
        return Ok(grid.clone());
    }
    let wx = area_weights(grid.width, width);
    let wy = area_weights(grid.height, height);
    // Separable: rows first, then columns.
    let mut tmp = Grid::zeros(width, grid.height);
    for y in 0..grid.height {
        let row = grid.row(y);
        for (tx, taps) in wx.iter().enumerate() {
            let v: f64 = taps.iter().map(|&(sx, w)| row[sx] * w).sum();
            tmp.set(tx, y, v);
        }
    }
    let mut out = Grid::zeros(width, height);
    for (ty, taps) in wy.iter().enumerate() {
        for x in 0..width {
            let v: f64 = taps.iter().map(|&(sy, w)| tmp.get(x, sy) * w).sum();
            out.set(x, ty, v);
        }
    }
    Ok(out)
}

/// For each target index, the overlapping source indices and normalized
/// overlap weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let lo = t as f64 * ratio;
            let hi = lo + ratio;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut taps: Vec<(usize, f64)> = (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for tap in &mut taps {
                tap.1 /= total;
            }
            taps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_examples() {
        let g = Grid::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(downsample(&g, 1).unwrap(), g);
        let d = downsample(&g, 2).unwrap();
        assert_eq!((d.width(), d.height()), (1, 1));
        assert_eq!(d.get(0, 0), 1.5);
        let c = Grid::new(2, 2, 0.7);
        assert_eq!(downsample(&c, 2).unwrap().get(0, 0), 0.7);
    }

    #[test]
    fn downsample_rejects_bad_input() {
        let g = Grid::zeros(6, 4);
        assert!(matches!(downsample(&g, 4), Err(Error::Dimension(_))));
        assert!(matches!(downsample(&g, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn downsample_preserves_range() {
        let g = Grid::from_fn(16, 8, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        for f in [2, 4, 8] {
            let (lo, hi) = downsample(&g, f).unwrap().min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let fine = Grid::from_fn(8, 4, |x, y| (x as f64).sin() + y as f64);
        let coarse = Grid::from_fn(4, 2, |x, y| (x * 3 + y) as f64 - 1.5);
        let lhs: f64 = downsample(&fine, 2)
            .unwrap()
            .data()
            .iter()
            .zip(coarse.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = fine
            .data()
            .iter()
            .zip(downsample_adjoint(&coarse, 2).data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn min_pool_blocks() {
        let mut g = Grid::new(4, 4, 1.0);
        g.set(3, 0, 0.0);
        let m = min_pool(&g, 2).unwrap();
        assert_eq!(m.data(), &[1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn resize_area_integer_ratio_matches_box() {
        let g = Grid::from_fn(8, 4, |x, y| (x + 10 * y) as f64);
        let a = resize_area(&g, 4, 2).unwrap();
        let b = downsample(&g, 2).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_area_preserves_constant() {
        let g = Grid::new(1241, 37, 0.25);
        let r = resize_area(&g, 416, 13).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
