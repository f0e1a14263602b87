//! Weighted multi-scale total objective over a snippet.
//!
//! The spatial terms are evaluated for every directed frame pair at every
//! pyramid level. Each (pair, level) task is independent and runs through
//! [`crate::par`]; the per-task results are then reduced in task order, so the
//! total does not depend on the thread count.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{pose_gradient, CameraIntrinsics};
use crate::grid::{downsample, downsample_adjoint, min_pool, Grid};
use crate::masking::{logistic, mask_loss, ExplainabilityField, HardEdgeMask};
use crate::optimizer::{decode_depth_derivative, SnippetState};
use crate::par;
use crate::synthesis::{sample_at, warp_coords_between, Frame, RigidTransform, WarpResult};

use super::alignment::{alignment_3d_loss, AlignmentLoss};
use super::inertia::{inertia_loss, Fingerprint, InertiaParams};
use super::photometric::{reconstruction_loss, ssim_loss, warp_backward, PixelLoss};

/// Pyramid factors the objective accepts.
pub const ALLOWED_SCALES: [usize; 4] = [1, 2, 4, 8];

/// Term weights and pyramid levels (as downsampling factors).
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub w_inertia: f64,
    pub w_rec: f64,
    pub w_ssim: f64,
    pub w_3d: f64,
    pub w_mask: f64,
    pub scales: Vec<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_inertia: 1.0,
            w_rec: 1.0,
            w_ssim: 0.2,
            w_3d: 0.1,
            w_mask: 0.15,
            scales: ALLOWED_SCALES.to_vec(),
        }
    }
}

impl LossWeights {
    /// All weights zero except the ones set afterwards.
    pub fn zero() -> Self {
        Self {
            w_inertia: 0.0,
            w_rec: 0.0,
            w_ssim: 0.0,
            w_3d: 0.0,
            w_mask: 0.0,
            scales: ALLOWED_SCALES.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_inertia, self.w_rec, self.w_ssim, self.w_3d, self.w_mask];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!("loss weights must be non-negative: {w:?}")));
        }
        if self.scales.is_empty() {
            return Err(Error::Domain("at least one scale is required".into()));
        }
        for (i, s) in self.scales.iter().enumerate() {
            if !ALLOWED_SCALES.contains(s) || self.scales[..i].contains(s) {
                return Err(Error::Domain(format!("invalid scale list {:?}", self.scales)));
            }
        }
        Ok(())
    }

    fn spatial_active(&self) -> bool {
        self.w_rec > 0.0 || self.w_ssim > 0.0 || self.w_3d > 0.0 || self.w_mask > 0.0
    }
}

/// Which neighbours act as sources for each target frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairMode {
    /// Source is the previous frame.
    Previous,
    /// Source is the next frame.
    Next,
    /// Both adjacent frames.
    #[default]
    Both,
}

impl PairMode {
    /// Directed `(target, source)` pairs for `n` frames.
    pub fn pairs(self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for t in 0..n {
            if matches!(self, PairMode::Previous | PairMode::Both) && t > 0 {
                out.push((t, t - 1));
            }
            if matches!(self, PairMode::Next | PairMode::Both) && t + 1 < n {
                out.push((t, t + 1));
            }
        }
        out
    }
}

/// Spatial term values at one pyramid level, summed over pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScaleTerms {
    pub factor: usize,
    pub rec: f64,
    pub ssim: f64,
    pub three_d: f64,
    pub mask: f64,
}

/// Gradients aligned with [`SnippetState`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub depth_logits: Vec<Grid>,
    /// Per absolute pose; entry 0 (the fixed reference frame) is always zero.
    pub poses: Vec<[f64; 6]>,
    pub explainability: Vec<Grid>,
}

/// Term values, weighted total and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub inertia: f64,
    /// True when the snippet was too short for the inertia term.
    pub inertia_skipped: bool,
    pub per_scale: Vec<ScaleTerms>,
    pub total: f64,
    pub gradients: Gradients,
    /// Fingerprint of all discrete branch decisions (sample cells, validity,
    /// residual signs, hinge states).
    pub signature: u64,
}

impl LossBreakdown {
    /// Spatial term summed over scales.
    pub fn sum_terms(&self) -> ScaleTerms {
        self.per_scale.iter().fold(ScaleTerms::default(), |acc, s| ScaleTerms {
            factor: 0,
            rec: acc.rec + s.rec,
            ssim: acc.ssim + s.ssim,
            three_d: acc.three_d + s.three_d,
            mask: acc.mask + s.mask,
        })
    }

    /// Recomputes the weighted total from the stored parts.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        let mut total = w.w_inertia * self.inertia;
        for s in &self.per_scale {
            total += w.w_rec * s.rec + w.w_ssim * s.ssim + w.w_3d * s.three_d + w.w_mask * s.mask;
        }
        total
    }
}

/// Preprocessed snippet data: intensity pyramids and per-level intrinsics.
#[derive(Clone, Debug)]
pub struct Objective {
    pyramids: Vec<Vec<Grid>>,
    k: CameraIntrinsics,
    scale_k: Vec<CameraIntrinsics>,
    pairs: Vec<(usize, usize)>,
    weights: LossWeights,
    inertia: InertiaParams,
    /// Skip evaluating terms whose weight is zero; their reported values
    /// are then zero as well.
    pub skip_inactive: bool,
}

struct TaskOutput {
    terms: ScaleTerms,
    d_depth_t: Grid,
    d_depth_s: Grid,
    d_logits: Grid,
    d_rotation: Matrix3<f64>,
    d_translation: Vector3<f64>,
    signature: u64,
}

impl Objective {
    pub fn new(
        frames: &[Frame],
        k: &CameraIntrinsics,
        weights: LossWeights,
        inertia: InertiaParams,
        mode: PairMode,
    ) -> Result<Self> {
        weights.validate()?;
        inertia.validate()?;
        if frames.len() < 2 {
            return Err(Error::InsufficientLength {
                needed: 2,
                got: frames.len(),
            });
        }
        let pyramids = frames
            .iter()
            .map(|f| {
                crate::synthesis::check_dims(&f.intensity, k, "frame")?;
                weights.scales.iter().map(|&s| downsample(&f.intensity, s)).collect()
            })
            .collect::<Result<Vec<Vec<Grid>>>>()?;
        let scale_k = weights.scales.iter().map(|&s| k.downscaled(s)).collect();
        Ok(Self {
            pyramids,
            k: *k,
            scale_k,
            pairs: mode.pairs(frames.len()),
            weights,
            inertia,
            skip_inactive: false,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.pyramids.len()
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.k
    }

    /// Directed `(target, source)` pairs; explainability fields and hard
    /// masks are indexed in this order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn inertia_params(&self) -> &InertiaParams {
        &self.inertia
    }

    /// Replaces the term weights; the pyramid levels must stay the same.
    pub fn set_weights(&mut self, weights: LossWeights) -> Result<()> {
        weights.validate()?;
        if weights.scales != self.weights.scales {
            return Err(Error::Domain("scales are fixed at construction".into()));
        }
        self.weights = weights;
        Ok(())
    }

    fn check_state(&self, state: &SnippetState, hard: &[HardEdgeMask]) -> Result<()> {
        let n = self.frame_count();
        if state.depth_logits.len() != n || state.poses.len() != n {
            return Err(Error::Dimension(format!(
                "state has {} depths and {} poses for {n} frames",
                state.depth_logits.len(),
                state.poses.len()
            )));
        }
        if state.explainability.len() != self.pairs.len() || hard.len() != self.pairs.len() {
            return Err(Error::Dimension(format!(
                "{} pairs but {} explainability fields and {} hard masks",
                self.pairs.len(),
                state.explainability.len(),
                hard.len()
            )));
        }
        let (w, h) = (self.k.width, self.k.height);
        let shape_ok = state
            .depth_logits
            .iter()
            .chain(state.explainability.iter().map(ExplainabilityField::logits))
            .chain(hard.iter().map(HardEdgeMask::grid))
            .all(|g| g.width() == w && g.height() == h);
        if !shape_ok {
            return Err(Error::Dimension(format!("state grids must be {w}x{h}")));
        }
        Ok(())
    }

    /// Total loss with all parts and gradients.
    pub fn evaluate(&self, state: &SnippetState, hard: &[HardEdgeMask]) -> Result<LossBreakdown> {
        self.evaluate_pairs(state, hard, None)
    }

    /// Like [`Objective::evaluate`], but the spatial terms only cover the
    /// listed pair indices (all pairs for `None`).
    pub fn evaluate_pairs(
        &self,
        state: &SnippetState,
        hard: &[HardEdgeMask],
        pairs: Option<&[usize]>,
    ) -> Result<LossBreakdown> {
        self.check_state(state, hard)?;
        let all: Vec<usize>;
        let selected = match pairs {
            Some(p) => {
                if let Some(&bad) = p.iter().find(|&&i| i >= self.pairs.len()) {
                    return Err(Error::Domain(format!("pair index {bad} out of range")));
                }
                p
            }
            None => {
                all = (0..self.pairs.len()).collect();
                &all
            }
        };
        let n = self.frame_count();
        let (w, h) = (self.k.width, self.k.height);
        let wts = &self.weights;
        let mut sig = Fingerprint::default();

        // Inertia over the snippet's absolute poses.
        let mut pose_grads = vec![[0.0; 6]; n];
        let (inertia, inertia_skipped) = if n >= 4 {
            let l = inertia_loss(&state.poses, &self.inertia)?;
            sig.push_u64(l.signature);
            for (g, li) in pose_grads.iter_mut().zip(&l.gradient) {
                for c in 0..6 {
                    g[c] += wts.w_inertia * li[c];
                }
            }
            (l.value, false)
        } else {
            (0.0, true)
        };

        let mut d_depth_full: Vec<Grid> = (0..n).map(|_| Grid::zeros(w, h)).collect();
        let mut d_logit_full: Vec<Grid> = (0..self.pairs.len()).map(|_| Grid::zeros(w, h)).collect();
        let mut per_scale: Vec<ScaleTerms> = wts
            .scales
            .iter()
            .map(|&f| ScaleTerms {
                factor: f,
                ..ScaleTerms::default()
            })
            .collect();

        if wts.spatial_active() {
            let depths: Vec<Grid> = par::map_slice(&state.depth_logits, |l| state.decode(l));
            let depth_pyr: Vec<Vec<Grid>> = par::map_slice(&depths, |d| {
                wts.scales.iter().map(|&s| downsample(d, s).expect("checked shape")).collect()
            });
            let soft_full: Vec<Grid> = par::map_slice(&state.explainability, |e| e.values());
            let transforms: Vec<RigidTransform> =
                state.poses.iter().map(RigidTransform::from_pose).collect();
            let nscale = wts.scales.len();
            let tasks = par::map_range(selected.len() * nscale, |task| {
                let (p, si) = (selected[task / nscale], task % nscale);
                self.pair_task(p, si, &depth_pyr, &soft_full, &state.explainability, &transforms, hard)
            });
            let mut d_rot = vec![Matrix3::zeros(); n];
            let mut d_tr = vec![Vector3::zeros(); n];
            for (task, out) in tasks.into_iter().enumerate() {
                let out = out?;
                let (p, si) = (selected[task / nscale], task % nscale);
                let (t, s) = self.pairs[p];
                let f = wts.scales[si];
                sig.push_u64(out.signature);
                let acc = &mut per_scale[si];
                acc.rec += out.terms.rec;
                acc.ssim += out.terms.ssim;
                acc.three_d += out.terms.three_d;
                acc.mask += out.terms.mask;
                d_depth_full[t].add_assign(&downsample_adjoint(&out.d_depth_t, f));
                d_depth_full[s].add_assign(&downsample_adjoint(&out.d_depth_s, f));
                d_logit_full[p].add_assign(&downsample_adjoint(&out.d_logits, f));
                // X = A_s⁻¹ ∘ A_t.
                let (at, as_) = (&transforms[t], &transforms[s]);
                let delta = at.translation - as_.translation;
                d_rot[t] += as_.rotation * out.d_rotation;
                d_tr[t] += as_.rotation * out.d_translation;
                d_tr[s] -= as_.rotation * out.d_translation;
                d_rot[s] += at.rotation * out.d_rotation.transpose() + delta * out.d_translation.transpose();
            }
            for i in 0..n {
                let g = pose_gradient(&state.poses[i], &d_rot[i], &d_tr[i]);
                for c in 0..6 {
                    pose_grads[i][c] += g[c];
                }
            }
        }
        pose_grads[0] = [0.0; 6];

        let depth_logits = state
            .depth_logits
            .iter()
            .zip(d_depth_full)
            .map(|(l, d)| l.zip_map(&d, |l, d| d * decode_depth_derivative(l)))
            .collect();
        let explainability = state
            .explainability
            .iter()
            .zip(d_logit_full)
            .map(|(e, d)| {
                e.logits().zip_map(&d, |l, d| {
                    let s = logistic(l);
                    d * s * (1.0 - s)
                })
            })
            .collect();

        let mut out = LossBreakdown {
            inertia,
            inertia_skipped,
            per_scale,
            total: 0.0,
            gradients: Gradients {
                depth_logits,
                poses: pose_grads,
                explainability,
            },
            signature: sig.finish(),
        };
        out.total = out.weighted_sum(wts);
        if !out.total.is_finite() {
            return Err(Error::NonFinite {
                what: "total loss".into(),
                iteration: state.iteration,
            });
        }
        Ok(out)
    }

    /// Spatial terms of one directed pair at one pyramid level. Returned
    /// gradients are already weighted; the logit gradient is with respect to
    /// the level's soft weights.
    fn pair_task(
        &self,
        p: usize,
        si: usize,
        depth_pyr: &[Vec<Grid>],
        soft_full: &[Grid],
        explain: &[ExplainabilityField],
        transforms: &[RigidTransform],
        hard: &[HardEdgeMask],
    ) -> Result<TaskOutput> {
        let wts = &self.weights;
        let (t, s) = self.pairs[p];
        let f = wts.scales[si];
        let k = &self.scale_k[si];
        let target = &self.pyramids[t][si];
        let source = &self.pyramids[s][si];
        let depth_t = &depth_pyr[t][si];
        let depth_s = &depth_pyr[s][si];
        let soft = downsample(&soft_full[p], f)?;
        let hard_c = min_pool(hard[p].grid(), f)?;
        let combined = hard_c.zip_map(&soft, |a, b| a * b);

        let x = RigidTransform::relative(&transforms[s], &transforms[t]);
        let coords = warp_coords_between(depth_t, k, k, &x);
        let warp = sample_at(source, coords);

        let active = |w: f64| w > 0.0 || !self.skip_inactive;
        let zeros = || Grid::zeros(k.width, k.height);
        let empty = || PixelLoss {
            value: 0.0,
            d_warped: zeros(),
            d_mask: zeros(),
        };
        let rec = if active(wts.w_rec) {
            reconstruction_loss(target, &warp, &combined)?
        } else {
            empty()
        };
        let ssim = if active(wts.w_ssim) {
            ssim_loss(target, &warp, &combined, Some(&hard_c))?
        } else {
            empty()
        };
        let d_warped = rec.d_warped.zip_map(&ssim.d_warped, |a, b| wts.w_rec * a + wts.w_ssim * b);
        let wb = warp_backward(depth_t, k, &x, &warp, &d_warped);

        let align = if active(wts.w_3d) {
            alignment_3d_loss(depth_t, depth_s, k, &x, &warp.coords, Some(&combined))?
        } else {
            AlignmentLoss {
                value: 0.0,
                d_depth_target: zeros(),
                d_depth_source: zeros(),
                d_rotation: Matrix3::zeros(),
                d_translation: Vector3::zeros(),
                d_weight: zeros(),
                valid: 0,
            }
        };

        // Mask term on the level's soft weights: mean of −ln(weight). At full
        // resolution this is evaluated from the logits for accuracy.
        let n = soft.len() as f64;
        let mask_value = if !active(wts.w_mask) {
            0.0
        } else if f == 1 {
            mask_loss(&explain[p]).0
        } else {
            soft.data().iter().map(|v| -v.ln()).sum::<f64>() / n
        };
        let d_soft_mask = soft.map(|v| -1.0 / (v * n));

        let mut d_logits = Grid::zeros(k.width, k.height);
        for i in 0..d_logits.len() {
            let d_comb = wts.w_rec * rec.d_mask.data()[i]
                + wts.w_ssim * ssim.d_mask.data()[i]
                + wts.w_3d * align.d_weight.data()[i];
            d_logits.data_mut()[i] = d_comb * hard_c.data()[i] + wts.w_mask * d_soft_mask.data()[i];
        }

        let mut d_depth_t = wb.d_depth;
        let mut a_t = align.d_depth_target;
        a_t.scale(wts.w_3d);
        d_depth_t.add_assign(&a_t);
        let mut d_depth_s = align.d_depth_source;
        d_depth_s.scale(wts.w_3d);

        Ok(TaskOutput {
            terms: ScaleTerms {
                factor: f,
                rec: rec.value,
                ssim: ssim.value,
                three_d: align.value,
                mask: mask_value,
            },
            d_depth_t,
            d_depth_s,
            d_logits,
            d_rotation: wb.d_rotation + align.d_rotation * wts.w_3d,
            d_translation: wb.d_translation + align.d_translation * wts.w_3d,
            signature: warp_signature(&warp, target),
        })
    }
}

/// Sample cells, validity and residual signs of a warp.
fn warp_signature(warp: &WarpResult, target: &Grid) -> u64 {
    let mut sig = Fingerprint::default();
    for i in 0..target.len() {
        let valid = warp.is_valid(i);
        sig.push(valid);
        if valid {
            sig.push_i64(warp.coords.u.data()[i].floor() as i64);
            sig.push_i64(warp.coords.v.data()[i].floor() as i64);
            sig.push(target.data()[i] > warp.synthesized.data()[i]);
        }
    }
    sig.finish()
}
