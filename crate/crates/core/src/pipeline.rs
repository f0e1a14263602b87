//! Whole-sequence runs: static filtering, snippet optimization and chaining.

use crate::dataset::{make_snippets, Sequence};
use crate::error::{Error, Result};
use crate::geometry::Pose6DoF;
use crate::masking::EdgeWidths;
use crate::objective::Objective;
use crate::optimizer::{
    chain_states, optimize_snippet, refresh_masks, static_filter, OptTrace, OptimizerConfig, SnippetState,
    StaticReport,
};
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub optimizer: OptimizerConfig,
    /// Frames between consecutive snippet starts.
    pub stride: usize,
    pub static_filter: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            stride: 3,
            static_filter: true,
        }
    }
}

impl PipelineConfig {
    /// Relative poses shared by consecutive snippets.
    pub fn overlap(&self) -> usize {
        (self.optimizer.snippet_len - 1).saturating_sub(self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.stride == 0 || self.stride > self.optimizer.snippet_len - 1 {
            return Err(Error::Domain(format!(
                "stride must be in 1..={} for snippet length {} (got {})",
                self.optimizer.snippet_len - 1,
                self.optimizer.snippet_len,
                self.stride
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SnippetRun {
    /// Original sequence indices of the snippet frames.
    pub frames: Vec<usize>,
    pub state: SnippetState,
    pub trace: OptTrace,
    /// Hard-mask band widths per pair at the final estimate.
    pub mask_widths: Vec<EdgeWidths>,
}

#[derive(Clone, Debug)]
pub struct SequenceRun {
    pub filter: StaticReport,
    pub snippets: Vec<SnippetRun>,
    /// Original sequence indices covered by `trajectory`.
    pub frames: Vec<usize>,
    /// Absolute camera-to-world poses, identity at the first covered frame.
    pub trajectory: Vec<Pose6DoF>,
}

impl SequenceRun {
    /// Ground-truth poses for the covered frames, re-based to the first.
    pub fn aligned_gt(&self, gt: &[Pose6DoF]) -> Vec<Pose6DoF> {
        let inv = gt[self.frames[0]].inverse();
        self.frames.iter().map(|&i| inv.compose(&gt[i])).collect()
    }
}

/// Optimizes every snippet of `seq` (in parallel when enabled) and chains the
/// results into one trajectory.
pub fn run_sequence(seq: &Sequence, cfg: &PipelineConfig) -> Result<SequenceRun> {
    cfg.validate()?;
    let filter = if cfg.static_filter {
        static_filter(&seq.frames, cfg.optimizer.static_threshold)?
    } else {
        StaticReport {
            kept: (0..seq.len()).collect(),
            dropped: Vec::new(),
            scores: vec![0.0; seq.len()],
        }
    };
    let kept = seq.select(&filter.kept)?;
    let snippets = make_snippets(&kept, cfg.optimizer.snippet_len, cfg.stride)?;
    if snippets.is_empty() {
        return Err(Error::InsufficientLength {
            needed: cfg.optimizer.snippet_len,
            got: kept.len(),
        });
    }
    let opt = &cfg.optimizer;
    let snippets = par::map_slice(&snippets, |s| {
        let (state, trace) = optimize_snippet(&s.frames, &kept.intrinsics, opt)?;
        let objective = Objective::new(&s.frames, &kept.intrinsics, opt.weights.clone(), opt.inertia, opt.pair_mode)?;
        let mask_widths = refresh_masks(&objective, &state, opt)?.iter().map(|m| m.widths()).collect();
        Ok(SnippetRun {
            frames: (s.start..s.start + s.len()).map(|j| filter.kept[j]).collect(),
            state,
            trace,
            mask_widths,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let states: Vec<SnippetState> = snippets.iter().map(|s| s.state.clone()).collect();
    let trajectory = chain_states(&states, cfg.overlap())?;
    let frames = filter.kept[..trajectory.len()].to_vec();
    Ok(SequenceRun {
        filter,
        snippets,
        frames,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};

    #[test]
    fn overlap_follows_stride() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.overlap(), 1);
        c.stride = 4;
        assert_eq!(c.overlap(), 0);
        c.stride = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn trajectory_covers_snippet_frames() {
        let seq = synth_generate(&SynthConfig { frames: 11, ..SynthConfig::default() }).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.optimizer.iters = 2;
        cfg.optimizer.weights.scales = vec![1];
        cfg.static_filter = false;
        let run = run_sequence(&seq, &cfg).unwrap();
        // Starts 0, 3, 6 with length 5: frames 0..=10.
        assert_eq!(run.snippets.len(), 3);
        assert_eq!(run.trajectory.len(), 11);
        assert_eq!(run.frames, (0..11).collect::<Vec<_>>());
        assert_eq!(run.snippets[2].frames, vec![6, 7, 8, 9, 10]);
        assert_eq!(run.aligned_gt(seq.gt_poses.as_ref().unwrap())[0], Pose6DoF::identity());
        assert!(run.snippets.iter().all(|s| s.mask_widths.len() == 8));
    }

    #[test]
    fn disabled_hard_mask_has_zero_widths() {
        let seq = synth_generate(&SynthConfig { frames: 5, ..SynthConfig::default() }).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.optimizer.iters = 1;
        cfg.optimizer.weights.scales = vec![1];
        cfg.optimizer.init_step = 0.5;
        cfg.static_filter = false;
        let on = run_sequence(&seq, &cfg).unwrap();
        assert!(on.snippets[0].mask_widths.iter().any(|w| *w != EdgeWidths::default()));
        cfg.optimizer.dhem_enabled = false;
        let off = run_sequence(&seq, &cfg).unwrap();
        assert!(off.snippets[0].mask_widths.iter().all(|w| *w == EdgeWidths::default()));
    }
}
