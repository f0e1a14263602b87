//! Procedural corridor scenes rendered along a smooth trajectory.
//!
//! The scene is the inside of a box: side walls, floor, ceiling and an end
//! wall. Each face carries a sum of random sinusoids in its own 2D surface
//! coordinates, so a surface point has the same texture from every pose.
//! Each pixel is cast into the box through the ground-truth pose and shaded
//! by the texture at the hit point, averaged over a 4×4 subpixel grid.
//! Sinusoids whose projected wavelength drops below a few pixels are faded
//! out to avoid aliasing.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::grid::Grid;
use crate::synthesis::{DepthMap, Frame};

use super::Sequence;

/// Box dimensions; camera axes: x right, y down, z forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub half_width: f64,
    /// Distance from the camera down to the floor.
    pub floor: f64,
    /// Distance from the camera up to the ceiling.
    pub ceiling: f64,
    /// Distance to the end wall.
    pub far: f64,
    /// Number of sinusoids in the texture.
    pub waves: usize,
    /// Wavelength range in world units, sampled log-uniformly.
    pub min_wavelength: f64,
    pub max_wavelength: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            half_width: 4.0,
            floor: 1.5,
            ceiling: 3.0,
            far: 20.0,
            waves: 24,
            min_wavelength: 0.25,
            max_wavelength: 8.0,
        }
    }
}

/// Speed and heading-rate profiles (per frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub speed: f64,
    pub speed_amplitude: f64,
    pub speed_period: f64,
    /// Peak heading rate, radians per frame (positive turns right).
    pub turn_amplitude: f64,
    pub turn_period: f64,
    /// Frames `[start, start + len)` stand still.
    pub stop: Option<(usize, usize)>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            speed: 0.5,
            speed_amplitude: 0.1,
            speed_period: 24.0,
            turn_amplitude: 0.01,
            turn_period: 40.0,
            stop: None,
        }
    }
}

impl TrajectorySpec {
    /// Straight motion at constant speed.
    pub fn constant(speed: f64) -> Self {
        Self {
            speed,
            speed_amplitude: 0.0,
            turn_amplitude: 0.0,
            ..Self::default()
        }
    }
}

/// Zero-mean Gaussian pose noise added before rendering.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jitter {
    /// Standard deviation of each translation component.
    pub translation: f64,
    /// Standard deviation of each Euler angle, radians.
    pub rotation: f64,
}

impl Jitter {
    pub fn is_zero(&self) -> bool {
        self.translation == 0.0 && self.rotation == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Focal length as a fraction of the width.
    pub focal: f64,
    pub scene: SceneSpec,
    /// Randomize scene dimensions around `scene` (±10%).
    pub randomize_scene: bool,
    pub trajectory: TrajectorySpec,
    pub jitter: Jitter,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 32,
            frames: 20,
            focal: 0.6,
            scene: SceneSpec::default(),
            randomize_scene: true,
            trajectory: TrajectorySpec::default(),
            jitter: Jitter::default(),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(8) || !self.height.is_multiple_of(8) {
            return Err(Error::Domain(format!(
                "resolution {}x{} must be nonzero and divisible by 8",
                self.width, self.height
            )));
        }
        if self.frames == 0 {
            return Err(Error::Domain("at least one frame is required".into()));
        }
        let s = &self.scene;
        let t = &self.trajectory;
        let ok = self.focal > 0.0
            && s.half_width > 0.0
            && s.floor > 0.0
            && s.ceiling > 0.0
            && s.far > 0.0
            && s.waves > 0
            && s.min_wavelength > 0.0
            && s.max_wavelength >= s.min_wavelength
            && t.speed >= 0.0
            && t.speed_amplitude >= 0.0
            && t.speed_amplitude <= t.speed
            && t.speed_period > 0.0
            && t.turn_period > 0.0
            && self.jitter.translation >= 0.0
            && self.jitter.rotation >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid synthetic config {self:?}")))
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let f = self.focal * self.width as f64;
        CameraIntrinsics::new(
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

/// Subsamples per pixel side; each pixel is the mean of the grid.
const SUPERSAMPLE: usize = 4;
/// Projected wavelengths (subsamples) over which a sinusoid fades in.
const FADE_START: f64 = 8.0;
const FADE_END: f64 = 16.0;

struct Texture {
    /// Per face: (kx, ky, phase, amplitude).
    waves: [Vec<(f64, f64, f64, f64)>; 5],
    /// Per-face standard deviation of the unfaded sum.
    sigma: [f64; 5],
}

impl Texture {
    fn new(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let (lo, hi) = (spec.min_wavelength.ln(), spec.max_wavelength.ln());
        let mut face = || -> Vec<(f64, f64, f64, f64)> {
            (0..spec.waves)
                .map(|_| {
                    let lambda = if hi > lo { rng.random_range(lo..=hi).exp() } else { spec.min_wavelength };
                    let angle = rng.random_range(0.0..TAU);
                    let amp = rng.random_range(0.5..1.0);
                    let phase = rng.random_range(0.0..TAU);
                    let k = TAU / lambda;
                    (k * angle.cos(), k * angle.sin(), phase, amp)
                })
                .collect()
        };
        let waves = [face(), face(), face(), face(), face()];
        let sigma = std::array::from_fn(|f| waves[f].iter().map(|w| w.3 * w.3 / 2.0).sum::<f64>().sqrt());
        Self { waves, sigma }
    }

    /// Intensity at surface coordinate `s` on `face`; `ds_dx`, `ds_dy` are the
    /// surface-coordinate steps per subsample.
    fn shade(&self, face: usize, s: [f64; 2], ds_dx: [f64; 2], ds_dy: [f64; 2]) -> f64 {
        let v: f64 = self.waves[face]
            .iter()
            .map(|&(a, b, p, m)| {
                let rx = a * ds_dx[0] + b * ds_dx[1];
                let ry = a * ds_dy[0] + b * ds_dy[1];
                let rate = rx.hypot(ry);
                let wavelength = if rate > 0.0 { TAU / rate } else { f64::INFINITY };
                let t = ((wavelength - FADE_START) / (FADE_END - FADE_START)).clamp(0.0, 1.0);
                let gain = t * t * (3.0 - 2.0 * t);
                gain * m * (a * s[0] + b * s[1] + p).sin()
            })
            .sum();
        (0.5 + 0.13 * v / self.sigma[face]).clamp(0.0, 1.0)
    }
}

/// Box faces as (axis, plane offset); surface coordinates are the other two axes.
fn faces(scene: &SceneSpec) -> [(usize, f64); 5] {
    [
        (0, scene.half_width),
        (0, -scene.half_width),
        (1, scene.floor),
        (1, -scene.ceiling),
        (2, scene.far),
    ]
}

fn surface_coords(axis: usize, p: &Vector3<f64>) -> [f64; 2] {
    match axis {
        0 => [p[2], p[1]],
        1 => [p[0], p[2]],
        _ => [p[0], p[1]],
    }
}

struct Hit {
    depth: f64,
    face: usize,
}

/// Nearest face hit by the pixel ray; `depth` is the camera z-depth.
fn cast(scene: &SceneSpec, r: &nalgebra::Matrix3<f64>, c: &Vector3<f64>, k: &CameraIntrinsics, x: f64, y: f64) -> Option<Hit> {
    let ray = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    let d = r * ray;
    let mut best: Option<Hit> = None;
    for (face, (axis, plane)) in faces(scene).into_iter().enumerate() {
        if d[axis] != 0.0 {
            // `ray` has unit z, so the ray parameter is the z-depth.
            let t = (plane - c[axis]) / d[axis];
            if t > 0.0 && best.as_ref().is_none_or(|b| t < b.depth) {
                best = Some(Hit { depth: t, face });
            }
        }
    }
    best
}

/// Point where the pixel ray meets the plane of `face`.
fn on_face(scene: &SceneSpec, r: &nalgebra::Matrix3<f64>, c: &Vector3<f64>, k: &CameraIntrinsics, face: usize, x: f64, y: f64) -> [f64; 2] {
    let (axis, plane) = faces(scene)[face];
    let d = r * Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    let t = (plane - c[axis]) / d[axis];
    surface_coords(axis, &(c + d * t))
}

/// Renders the z-depth and intensity seen from `pose`.
fn render(scene: &SceneSpec, texture: &Texture, pose: &Pose6DoF, k: &CameraIntrinsics) -> Result<(Grid, Grid)> {
    let r = pose.rotation();
    let c = pose.translation();
    let escape = || Error::Domain(format!("camera ray escapes the scene at pose {pose:?}"));
    let mut depth = Grid::zeros(k.width, k.height);
    let mut img = Grid::zeros(k.width, k.height);
    let h = 0.5 / SUPERSAMPLE as f64;
    for y in 0..k.height {
        for x in 0..k.width {
            let (xf, yf) = (x as f64, y as f64);
            depth.set(x, y, cast(scene, &r, &c, k, xf, yf).ok_or_else(escape)?.depth);
            let mut sum = 0.0;
            for j in 0..SUPERSAMPLE {
                for i in 0..SUPERSAMPLE {
                    let px = xf - 0.5 + (2 * i + 1) as f64 * h;
                    let py = yf - 0.5 + (2 * j + 1) as f64 * h;
                    let face = cast(scene, &r, &c, k, px, py).ok_or_else(escape)?.face;
                    let at = |dx: f64, dy: f64| on_face(scene, &r, &c, k, face, px + dx, py + dy);
                    let (xp, xm, yp, ym) = (at(h, 0.0), at(-h, 0.0), at(0.0, h), at(0.0, -h));
                    let ds_dx = [xp[0] - xm[0], xp[1] - xm[1]];
                    let ds_dy = [yp[0] - ym[0], yp[1] - ym[1]];
                    sum += texture.shade(face, at(0.0, 0.0), ds_dx, ds_dy);
                }
            }
            img.set(x, y, sum / (SUPERSAMPLE * SUPERSAMPLE) as f64);
        }
    }
    Ok((depth, img))
}

/// Ground-truth trajectory without jitter.
pub fn trajectory(spec: &TrajectorySpec, frames: usize, rng: &mut ChaCha8Rng) -> Vec<Pose6DoF> {
    let phase_v = rng.random_range(0.0..TAU);
    let phase_h = rng.random_range(0.0..TAU);
    let mut pos = Vector3::zeros();
    let mut heading = 0.0;
    let mut out = Vec::with_capacity(frames);
    out.push(Pose6DoF::identity());
    for i in 1..frames {
        let stopped = spec.stop.is_some_and(|(s, len)| i >= s && i < s + len);
        if !stopped {
            let t = i as f64;
            let v = spec.speed + spec.speed_amplitude * (TAU * t / spec.speed_period + phase_v).sin();
            let w = spec.turn_amplitude * (TAU * t / spec.turn_period + phase_h).sin();
            heading += w;
            pos += Vector3::new(heading.sin(), 0.0, heading.cos()) * v;
        }
        out.push(Pose6DoF::new(pos, Vector3::new(0.0, heading, 0.0)));
    }
    out
}

/// Renders a synthetic sequence with ground-truth poses and depths.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scene = cfg.scene;
    if cfg.randomize_scene {
        let mut jiggle = |v: f64| v * rng.random_range(0.9..1.1);
        scene.half_width = jiggle(scene.half_width);
        scene.floor = jiggle(scene.floor);
        scene.ceiling = jiggle(scene.ceiling);
        scene.far = jiggle(scene.far);
    }
    let texture = Texture::new(&scene, &mut rng);
    let k = cfg.intrinsics()?;

    let mut poses = trajectory(&cfg.trajectory, cfg.frames, &mut rng);
    if !cfg.jitter.is_zero() {
        let nt = Normal::new(0.0, cfg.jitter.translation).map_err(|e| Error::Domain(e.to_string()))?;
        let nr = Normal::new(0.0, cfg.jitter.rotation).map_err(|e| Error::Domain(e.to_string()))?;
        for p in poses.iter_mut().skip(1) {
            let dt = Vector3::from_fn(|_, _| nt.sample(&mut rng));
            let dr = Vector3::from_fn(|_, _| nr.sample(&mut rng));
            *p = Pose6DoF::new(p.translation() + dt, p.orientation() + dr);
        }
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut depths = Vec::with_capacity(cfg.frames);
    for (i, pose) in poses.iter().enumerate() {
        let (depth, img) = render(&scene, &texture, pose, &k)?;
        frames.push(Frame::new(img, 0.1 * i as f64)?);
        depths.push(DepthMap::new(depth)?);
    }
    Sequence::new(frames, k, Some(poses), Some(depths))
}
