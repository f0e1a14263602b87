//! Direct per-snippet optimization with Adam, static-frame filtering and
//! snippet chaining.
//!
//! Depth is parameterized by a logit squashed into `[DEPTH_MIN, DEPTH_MAX]`.
//! Poses are absolute (camera-to-world) with frame 0 fixed at the identity.
//! The monocular scale gauge is fixed by holding the norm of frame 1's
//! translation at `init_step` throughout.

use std::time::Instant;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, CameraIntrinsics, Pose6DoF};
use crate::grid::{resize_area, Grid};
use crate::masking::{build_dhem, logistic, DhemParams, ExplainabilityField, HardEdgeMask};
use crate::objective::{InertiaParams, LossBreakdown, LossWeights, Objective, PairMode};
use crate::synthesis::{Frame, RigidTransform};

pub const DEPTH_MIN: f64 = 0.1;
pub const DEPTH_MAX: f64 = 100.0;

#[inline]
pub fn decode_depth(logit: f64) -> f64 {
    DEPTH_MIN + (DEPTH_MAX - DEPTH_MIN) * logistic(logit)
}

/// `∂ decode_depth / ∂ logit`.
#[inline]
pub fn decode_depth_derivative(logit: f64) -> f64 {
    let s = logistic(logit);
    (DEPTH_MAX - DEPTH_MIN) * s * (1.0 - s)
}

/// Inverse of [`decode_depth`] for depths strictly inside the range.
pub fn encode_depth(depth: f64) -> Result<f64> {
    if !(depth > DEPTH_MIN && depth < DEPTH_MAX) {
        return Err(Error::Domain(format!(
            "depth {depth} outside ({DEPTH_MIN}, {DEPTH_MAX})"
        )));
    }
    let p = (depth - DEPTH_MIN) / (DEPTH_MAX - DEPTH_MIN);
    Ok((p / (1.0 - p)).ln())
}

/// Optimization variables of one snippet.
#[derive(Clone, Debug, PartialEq)]
pub struct SnippetState {
    pub depth_logits: Vec<Grid>,
    /// Absolute camera-to-world poses within the snippet; entry 0 is the
    /// identity.
    pub poses: Vec<Pose6DoF>,
    /// One field per directed pair, in [`Objective::pairs`] order.
    pub explainability: Vec<ExplainabilityField>,
    pub iteration: usize,
}

impl SnippetState {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    /// Decoded depth of a logit grid.
    pub fn decode(&self, logits: &Grid) -> Grid {
        logits.map(decode_depth)
    }

    pub fn depth(&self, i: usize) -> Grid {
        self.decode(&self.depth_logits[i])
    }

    pub fn depths(&self) -> Vec<Grid> {
        self.depth_logits.iter().map(|l| self.decode(l)).collect()
    }

    /// Relative poses `A_{i−1}⁻¹ ∘ A_i` for `i = 1..N`.
    pub fn relative_poses(&self) -> Vec<Pose6DoF> {
        self.poses
            .windows(2)
            .map(|w| w[0].inverse().compose(&w[1]))
            .collect()
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Entries with a zero gradient
/// and zero first moment are left bitwise unchanged.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam buffers: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("gradient entry {i}"),
            iteration: state.t as usize,
        });
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        if state.m[i] == 0.0 {
            continue;
        }
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Result of [`static_filter`].
#[derive(Clone, Debug, PartialEq)]
pub struct StaticReport {
    /// Indices of kept frames, in order.
    pub kept: Vec<usize>,
    /// Indices of dropped frames.
    pub dropped: Vec<usize>,
    /// Mean absolute difference to the previous kept frame, per frame
    /// (0 for the first).
    pub scores: Vec<f64>,
}

/// Drops frames whose mean absolute intensity difference to the previous kept
/// frame, at 1/8 resolution, is below `tau`. The first frame is always kept.
pub fn static_filter(frames: &[Frame], tau: f64) -> Result<StaticReport> {
    if frames.is_empty() {
        return Err(Error::InsufficientLength { needed: 1, got: 0 });
    }
    let small = frames
        .iter()
        .map(|f| {
            let (w, h) = ((f.width() / 8).max(1), (f.height() / 8).max(1));
            resize_area(&f.intensity, w, h)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = StaticReport {
        kept: vec![0],
        dropped: Vec::new(),
        scores: vec![0.0],
    };
    let mut last = 0;
    for i in 1..frames.len() {
        small[i].check_shape(&small[last], "static filter")?;
        let score = small[i]
            .data()
            .iter()
            .zip(small[last].data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / small[i].len() as f64;
        report.scores.push(score);
        if score < tau {
            report.dropped.push(i);
        } else {
            report.kept.push(i);
            last = i;
        }
    }
    Ok(report)
}

/// Everything that controls one snippet optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub adam: AdamConfig,
    /// Learning rate at the last iteration as a fraction of `adam.lr`;
    /// the rate follows a cosine from 1 to this value.
    pub lr_final: f64,
    pub iters: usize,
    pub snippet_len: usize,
    pub weights: LossWeights,
    pub inertia: InertiaParams,
    pub dhem: DhemParams,
    /// Disables the hard edge mask when false.
    pub dhem_enabled: bool,
    /// Iterations between hard-mask refreshes.
    pub dhem_refresh: usize,
    /// Reference depth used to express the estimated speed in scene units
    /// for the hard-mask rule.
    pub dhem_depth_ref: f64,
    pub static_threshold: f64,
    pub pair_mode: PairMode,
    pub init_depth: f64,
    /// Initial forward step per frame; also the gauge norm of frame 1.
    pub init_step: f64,
    pub init_logit: f64,
    /// Parameter units: Adam moves a translation by about `lr · translation_unit`
    /// and a rotation by about `lr · rotation_unit` per step.
    pub translation_unit: f64,
    pub rotation_unit: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lr_final: 1.0,
            iters: 300,
            snippet_len: 5,
            weights: LossWeights::default(),
            inertia: InertiaParams::default(),
            dhem: DhemParams::default(),
            dhem_enabled: true,
            dhem_refresh: 25,
            dhem_depth_ref: 25.0,
            static_threshold: 0.01,
            pair_mode: PairMode::Both,
            init_depth: 10.0,
            init_step: 0.05,
            init_logit: 3.0,
            translation_unit: 0.05,
            rotation_unit: 0.01,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate used at iteration `it`.
    pub fn learning_rate(&self, it: usize) -> f64 {
        if self.lr_final == 1.0 || self.iters <= 1 {
            return self.adam.lr;
        }
        let x = it as f64 / (self.iters - 1) as f64;
        let c = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
        self.adam.lr * (self.lr_final + (1.0 - self.lr_final) * c)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let ok = a.lr > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0
            && self.lr_final > 0.0
            && self.lr_final <= 1.0
            && self.snippet_len >= 2
            && self.dhem_refresh >= 1
            && self.dhem_depth_ref > 0.0
            && self.init_step > 0.0
            && self.translation_unit > 0.0
            && self.rotation_unit > 0.0
            && self.init_depth > DEPTH_MIN
            && self.init_depth < DEPTH_MAX
            && self.init_logit.is_finite();
        if !ok {
            return Err(Error::Domain(format!("invalid optimizer config {self:?}")));
        }
        self.weights.validate()?;
        self.inertia.validate()
    }
}

/// Loss parts recorded at one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub inertia: f64,
    pub rec: f64,
    pub ssim: f64,
    pub three_d: f64,
    pub mask: f64,
    pub total: f64,
}

impl IterRecord {
    pub fn from_breakdown(iteration: usize, b: &LossBreakdown) -> Self {
        let s = b.sum_terms();
        Self {
            iteration,
            inertia: b.inertia,
            rec: s.rec,
            ssim: s.ssim,
            three_d: s.three_d,
            mask: s.mask,
            total: b.total,
        }
    }
}

/// Per-iteration history of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptTrace {
    /// Loss at the start of each completed iteration.
    pub records: Vec<IterRecord>,
    /// Loss after the last update.
    pub final_record: Option<IterRecord>,
    pub wall_seconds: f64,
    /// False when the final total exceeds the initial one.
    pub converged: bool,
    /// Diagnostic when the run stopped on a non-finite value.
    pub failure: Option<String>,
}

impl OptTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    /// CSV with one row per completed iteration plus the final evaluation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,inertia,rec,ssim,three_d,mask,total\n");
        for r in self.records.iter().chain(self.final_record.iter()) {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.iteration, r.inertia, r.rec, r.ssim, r.three_d, r.mask, r.total
            ));
        }
        s
    }
}

/// Initial state: constant depth, constant forward steps, explainability
/// logits at `init_logit`.
pub fn init_state(frames: &[Frame], pairs: usize, cfg: &OptimizerConfig) -> Result<SnippetState> {
    if frames.len() < 2 {
        return Err(Error::InsufficientLength {
            needed: 2,
            got: frames.len(),
        });
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    let logit = encode_depth(cfg.init_depth)?;
    let step = Pose6DoF::from_translation(Vector3::new(0.0, 0.0, cfg.init_step));
    let mut poses = vec![Pose6DoF::identity()];
    for i in 1..frames.len() {
        poses.push(poses[i - 1].compose(&step));
    }
    Ok(SnippetState {
        depth_logits: vec![Grid::new(w, h, logit); frames.len()],
        poses,
        explainability: vec![ExplainabilityField::constant(w, h, cfg.init_logit); pairs],
        iteration: 0,
    })
}

/// Steering rate of a source-from-target transform in radians per frame,
/// positive when the source view is turned left of the target view. Target
/// content then leaves the source view on the right.
pub fn steering_rate(x: &RigidTransform) -> f64 {
    // Target forward axis expressed in the source camera.
    let f = x.rotation * Vector3::z();
    f[0].atan2(f[2])
}

/// Hard masks for every pair from the current estimates.
pub fn refresh_masks(
    objective: &Objective,
    state: &SnippetState,
    cfg: &OptimizerConfig,
) -> Result<Vec<HardEdgeMask>> {
    let k = objective.intrinsics();
    if !cfg.dhem_enabled {
        return Ok(vec![HardEdgeMask::all_ones(k.width, k.height); objective.pairs().len()]);
    }
    let transforms: Vec<RigidTransform> = state.poses.iter().map(RigidTransform::from_pose).collect();
    objective
        .pairs()
        .iter()
        .map(|&(t, s)| {
            let x = RigidTransform::relative(&transforms[s], &transforms[t]);
            let median = median(state.depth(t).data());
            let speed = x.translation.norm() * cfg.dhem_depth_ref / median;
            build_dhem(speed, steering_rate(&x), k, &cfg.dhem)
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Layout {
    depth: usize,
    poses: usize,
    frames: usize,
}

impl Layout {
    fn pose_offset(&self, frame: usize) -> usize {
        self.depth + (frame - 1) * 6
    }

    fn explain_offset(&self) -> usize {
        self.depth + self.poses
    }
}

fn flatten(state: &SnippetState, cfg: &OptimizerConfig) -> (Vec<f64>, Layout) {
    let mut out = Vec::new();
    for l in &state.depth_logits {
        out.extend_from_slice(l.data());
    }
    let depth = out.len();
    for p in &state.poses[1..] {
        let q = p.params();
        for (c, v) in q.iter().enumerate() {
            out.push(v / unit(c, cfg));
        }
    }
    let poses = out.len() - depth;
    for e in &state.explainability {
        out.extend_from_slice(e.logits().data());
    }
    (
        out,
        Layout {
            depth,
            poses,
            frames: state.poses.len(),
        },
    )
}

#[inline]
fn unit(component: usize, cfg: &OptimizerConfig) -> f64 {
    if component < 3 {
        cfg.translation_unit
    } else {
        cfg.rotation_unit
    }
}

fn flatten_gradient(b: &LossBreakdown, cfg: &OptimizerConfig) -> Vec<f64> {
    let g = &b.gradients;
    let mut out = Vec::new();
    for l in &g.depth_logits {
        out.extend_from_slice(l.data());
    }
    for p in &g.poses[1..] {
        for (c, v) in p.iter().enumerate() {
            out.push(v * unit(c, cfg));
        }
    }
    for e in &g.explainability {
        out.extend_from_slice(e.data());
    }
    out
}

fn unflatten(flat: &[f64], layout: &Layout, state: &mut SnippetState, cfg: &OptimizerConfig) {
    let mut off = 0;
    for l in &mut state.depth_logits {
        let n = l.len();
        l.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    for i in 1..layout.frames {
        let o = layout.pose_offset(i);
        let mut q = [0.0; 6];
        for c in 0..6 {
            q[c] = flat[o + c] * unit(c, cfg);
        }
        state.poses[i] = Pose6DoF::from_params(&q);
    }
    let mut off = layout.explain_offset();
    for e in &mut state.explainability {
        let l = e.logits_mut();
        let n = l.len();
        l.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// Removes the component of frame 1's translation gradient along its
/// translation, keeping the update tangent to the gauge sphere.
fn project_gauge(flat: &[f64], grad: &mut [f64], layout: &Layout) {
    if layout.frames < 2 {
        return;
    }
    let o = layout.pose_offset(1);
    let t = Vector3::new(flat[o], flat[o + 1], flat[o + 2]);
    let n = t.norm();
    if n == 0.0 {
        return;
    }
    let u = t / n;
    let g = Vector3::new(grad[o], grad[o + 1], grad[o + 2]);
    let g = g - u * g.dot(&u);
    grad[o..o + 3].copy_from_slice(g.as_slice());
}

fn renormalize_gauge(flat: &mut [f64], layout: &Layout, norm: f64) {
    if layout.frames < 2 {
        return;
    }
    let o = layout.pose_offset(1);
    let t = Vector3::new(flat[o], flat[o + 1], flat[o + 2]);
    let n = t.norm();
    if n > 0.0 {
        let t = t * (norm / n);
        flat[o..o + 3].copy_from_slice(t.as_slice());
    }
}

/// Runs `cfg.iters` Adam steps on the total objective of one snippet.
pub fn optimize_snippet(
    frames: &[Frame],
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<(SnippetState, OptTrace)> {
    cfg.validate()?;
    let objective = Objective::new(frames, k, cfg.weights.clone(), cfg.inertia, cfg.pair_mode)?;
    let mut state = init_state(frames, objective.pairs().len(), cfg)?;
    let trace = run(&objective, &mut state, cfg)?;
    Ok((state, trace))
}

/// Optimizes `state` in place against a prepared objective.
pub fn run(objective: &Objective, state: &mut SnippetState, cfg: &OptimizerConfig) -> Result<OptTrace> {
    let start = Instant::now();
    let mut trace = OptTrace::default();
    let (mut flat, layout) = flatten(state, cfg);
    let gauge = cfg.init_step / cfg.translation_unit;
    renormalize_gauge(&mut flat, &layout, gauge);
    unflatten(&flat, &layout, state, cfg);
    let mut adam = AdamState::new(flat.len());
    let mut masks = refresh_masks(objective, state, cfg)?;
    for it in 0..cfg.iters {
        state.iteration = it;
        if it > 0 && it % cfg.dhem_refresh == 0 {
            masks = refresh_masks(objective, state, cfg)?;
        }
        let b = match objective.evaluate(state, &masks) {
            Ok(b) => b,
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        };
        trace.records.push(IterRecord::from_breakdown(it, &b));
        let mut grad = flatten_gradient(&b, cfg);
        project_gauge(&flat, &mut grad, &layout);
        let step_cfg = AdamConfig {
            lr: cfg.learning_rate(it),
            ..cfg.adam
        };
        if let Err(e) = adam_step(&mut flat, &grad, &mut adam, &step_cfg) {
            trace.failure = Some(e.to_string());
            break;
        }
        renormalize_gauge(&mut flat, &layout, gauge);
        unflatten(&flat, &layout, state, cfg);
    }
    state.iteration = trace.records.len();
    if trace.failure.is_none() {
        match objective.evaluate(state, &masks) {
            Ok(b) => trace.final_record = Some(IterRecord::from_breakdown(state.iteration, &b)),
            Err(e) => trace.failure = Some(e.to_string()),
        }
    }
    let initial = trace.records.first().map(|r| r.total);
    let last = trace.final_record.map(|r| r.total);
    trace.converged = trace.failure.is_none()
        && match (initial, last) {
            (Some(a), Some(b)) => b <= a,
            _ => true,
        };
    trace.wall_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// Builds an absolute trajectory from per-snippet relative poses.
///
/// Consecutive snippets share `overlap` relative poses: the last `overlap`
/// of one snippet describe the same frame steps as the first `overlap` of the
/// next. Each later snippet is rescaled so its overlapping translation norms
/// match the trajectory so far, then overlapping estimates are averaged
/// (translations arithmetically, Euler angles through wrapped differences).
pub fn chain_snippets(relatives: &[Vec<Pose6DoF>], overlap: usize) -> Result<Vec<Pose6DoF>> {
    let mut steps: Vec<Vec<Pose6DoF>> = Vec::new();
    let mut scale_ref: Vec<f64> = Vec::new();
    for (si, rel) in relatives.iter().enumerate() {
        if si > 0 && rel.len() <= overlap {
            return Err(Error::Dimension(format!(
                "snippet {si} has {} relative poses, overlap is {overlap}",
                rel.len()
            )));
        }
        if si > 0 && steps.len() < overlap {
            return Err(Error::Dimension(format!(
                "overlap {overlap} exceeds the {} steps chained before snippet {si}",
                steps.len()
            )));
        }
        let start = if si == 0 { 0 } else { steps.len() - overlap };
        let mut scale = 1.0;
        if si > 0 && overlap > 0 {
            let prev: f64 = scale_ref[start..].iter().sum();
            let cur: f64 = rel[..overlap].iter().map(|p| p.translation().norm()).sum();
            if prev > 0.0 && cur > 0.0 {
                scale = prev / cur;
            }
        }
        for (j, p) in rel.iter().enumerate() {
            let p = Pose6DoF::new(p.translation() * scale, p.orientation());
            let idx = start + j;
            if idx < steps.len() {
                steps[idx].push(p);
            } else {
                scale_ref.push(p.translation().norm());
                steps.push(vec![p]);
            }
        }
    }
    let mut out = vec![Pose6DoF::identity()];
    for est in &steps {
        let step = average_poses(est);
        let next = out[out.len() - 1].compose(&step);
        out.push(next);
    }
    Ok(out)
}

/// Componentwise mean of pose estimates with wrapped angle averaging.
pub fn average_poses(est: &[Pose6DoF]) -> Pose6DoF {
    if est.len() == 1 {
        return est[0];
    }
    let n = est.len() as f64;
    let t = est.iter().map(|p| p.translation()).sum::<Vector3<f64>>() / n;
    let base = est[0].orientation();
    let mut d = Vector3::zeros();
    for p in est {
        let o = p.orientation();
        for c in 0..3 {
            d[c] += wrap_angle(o[c] - base[c]);
        }
    }
    Pose6DoF::new(t, base + d / n)
}

/// Convenience wrapper over [`chain_snippets`] for optimized states.
pub fn chain_states(states: &[SnippetState], overlap: usize) -> Result<Vec<Pose6DoF>> {
    let rel: Vec<Vec<Pose6DoF>> = states.iter().map(SnippetState::relative_poses).collect();
    chain_snippets(&rel, overlap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_decode_round_trip_and_bounds() {
        for d in [0.2, 1.0, 10.0, 55.0, 99.0] {
            assert!((decode_depth(encode_depth(d).unwrap()) - d).abs() < 1e-9);
        }
        for l in [-1e6, -50.0, 0.0, 50.0, 1e6] {
            let d = decode_depth(l);
            assert!((DEPTH_MIN..=DEPTH_MAX).contains(&d));
        }
        let h = 1e-6;
        let fd = (decode_depth(0.3 + h) - decode_depth(0.3 - h)) / (2.0 * h);
        assert!((fd - decode_depth_derivative(0.3)).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![1.5, -2.0];
        let before = p.clone();
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        s.m = vec![0.5, 0.5];
        s.v = vec![0.25, 0.25];
        // Moments decay but parameters still move by the first moment.
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert!((s.m[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-6 * 0.01 + 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut x = vec![1.0];
        let mut s = AdamState::new(1);
        for _ in 0..200 {
            let g = vec![2.0 * x[0]];
            adam_step(&mut x, &g, &mut s, &cfg).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let r = adam_step(&mut p, &[f64::NAN], &mut s, &AdamConfig::default());
        assert!(matches!(r, Err(Error::NonFinite { .. })));
        assert_eq!(s.t, 0);
    }

    fn frame(v: f64) -> Frame {
        Frame::new(Grid::from_fn(32, 16, |x, y| (0.5 + 0.3 * (0.4 * x as f64 + v).sin() * (0.3 * y as f64).cos()).clamp(0.0, 1.0)), 0.0).unwrap()
    }

    #[test]
    fn static_filter_cases() {
        let same = vec![frame(0.0); 4];
        assert_eq!(static_filter(&same, 0.01).unwrap().kept, vec![0]);
        let alt: Vec<Frame> = (0..6).map(|i| frame(if i % 2 == 0 { 0.0 } else { 2.5 })).collect();
        assert_eq!(static_filter(&alt, 0.01).unwrap().kept, vec![0, 1, 2, 3, 4, 5]);
        assert!(static_filter(&[], 0.01).is_err());
    }

    #[test]
    fn init_state_is_constant_and_deterministic() {
        let frames = vec![frame(0.0), frame(0.5), frame(1.0)];
        let cfg = OptimizerConfig::default();
        let s = init_state(&frames, 4, &cfg).unwrap();
        for d in s.depths() {
            assert!(d.data().iter().all(|&v| (v - 10.0).abs() < 1e-12));
        }
        let rel = s.relative_poses();
        assert_eq!(rel[0], rel[1]);
        assert_eq!(s, init_state(&frames, 4, &cfg).unwrap());
    }

    #[test]
    fn zero_iterations_return_init_state() {
        let frames = vec![frame(0.0), frame(0.5), frame(1.0)];
        let k = CameraIntrinsics::new(30.0, 30.0, 15.5, 7.5, 32, 16).unwrap();
        let cfg = OptimizerConfig {
            iters: 0,
            ..OptimizerConfig::default()
        };
        let (s, trace) = optimize_snippet(&frames, &k, &cfg).unwrap();
        assert_eq!(s, init_state(&frames, 4, &cfg).unwrap());
        assert!(trace.records.is_empty());
    }

    #[test]
    fn chain_examples() {
        let step = Pose6DoF::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let single = chain_snippets(&[vec![Pose6DoF::identity(); 4]], 0).unwrap();
        assert!(single.iter().all(|p| p.is_identity()));
        let two = chain_snippets(&[vec![step; 4], vec![step; 4]], 0).unwrap();
        for (i, p) in two.iter().enumerate() {
            assert!((p.translation() - Vector3::new(0.0, 0.0, i as f64)).norm() < 1e-12);
        }
        let overlapped = chain_snippets(&[vec![step; 4], vec![Pose6DoF::from_translation(Vector3::new(0.0, 0.0, 2.0)); 4]], 1).unwrap();
        assert_eq!(overlapped.len(), 8);
        for (i, p) in overlapped.iter().enumerate() {
            assert!((p.translation()[2] - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_then_difference_round_trips() {
        let rel: Vec<Vec<Pose6DoF>> = (0..3)
            .map(|s| {
                (0..4)
                    .map(|i| {
                        let a = 0.01 * (s * 4 + i) as f64;
                        Pose6DoF::new(Vector3::new(0.1 * a, -0.02, 0.5 + a), Vector3::new(a, -0.5 * a, 0.3 * a))
                    })
                    .collect()
            })
            .collect();
        let abs = chain_snippets(&rel, 0).unwrap();
        let flat: Vec<Pose6DoF> = rel.concat();
        for (i, w) in abs.windows(2).enumerate() {
            let r = w[0].inverse().compose(&w[1]);
            let (a, b) = (r.params(), flat[i].params());
            for c in 0..6 {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn average_handles_wraparound() {
        let a = Pose6DoF::new(Vector3::zeros(), Vector3::new(0.0, 0.0, std::f64::consts::PI - 0.1));
        let b = Pose6DoF::new(Vector3::zeros(), Vector3::new(0.0, 0.0, -std::f64::consts::PI + 0.1));
        let m = average_poses(&[a, b]);
        assert!((m.orientation()[2].abs() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn steering_sign_convention() {
        // Source camera turned left of the target: a negative rotation about
        // the camera's (downward) y axis.
        let target = Pose6DoF::identity();
        let source = Pose6DoF::new(Vector3::zeros(), Vector3::new(0.0, -0.05, 0.0));
        let x = RigidTransform::relative(&RigidTransform::from_pose(&source), &RigidTransform::from_pose(&target));
        assert!((steering_rate(&x) - 0.05).abs() < 1e-12);
        let x = RigidTransform::relative(&RigidTransform::from_pose(&target), &RigidTransform::from_pose(&source));
        assert!((steering_rate(&x) + 0.05).abs() < 1e-12);
    }
}
