//! Sequences, snippets, file formats and the synthetic generator.

pub mod kitti;
pub mod pfm;
pub mod synth;

pub use kitti::{
    load_sequence, load_sequence_with_poses, parse_kitti_calib, parse_kitti_pose_line, read_poses,
    serialize_kitti_pose, write_poses, write_sequence,
};
pub use pfm::{pfm_read, pfm_write};
pub use synth::{synth_generate, Jitter, SceneSpec, SynthConfig, TrajectorySpec};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::synthesis::{DepthMap, Frame};

/// Ordered frames with shared intrinsics and optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub intrinsics: CameraIntrinsics,
    /// Absolute camera-to-world poses, one per frame.
    pub gt_poses: Option<Vec<Pose6DoF>>,
    pub gt_depths: Option<Vec<DepthMap>>,
}

impl Sequence {
    pub fn new(
        frames: Vec<Frame>,
        intrinsics: CameraIntrinsics,
        gt_poses: Option<Vec<Pose6DoF>>,
        gt_depths: Option<Vec<DepthMap>>,
    ) -> Result<Self> {
        intrinsics.validate()?;
        for (i, f) in frames.iter().enumerate() {
            if f.width() != intrinsics.width || f.height() != intrinsics.height {
                return Err(Error::Dimension(format!(
                    "frame {i} is {}x{}, intrinsics expect {}x{}",
                    f.width(),
                    f.height(),
                    intrinsics.width,
                    intrinsics.height
                )));
            }
        }
        if let Some(i) = frames.windows(2).position(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::Load(format!(
                "timestamps must increase strictly (frame {} at {} after {})",
                i + 1,
                frames[i + 1].timestamp,
                frames[i].timestamp
            )));
        }
        if let Some(p) = &gt_poses {
            if p.len() != frames.len() {
                return Err(Error::Load(format!("{} poses for {} frames", p.len(), frames.len())));
            }
        }
        if let Some(d) = &gt_depths {
            if d.len() != frames.len() {
                return Err(Error::Load(format!("{} depth maps for {} frames", d.len(), frames.len())));
            }
        }
        Ok(Self {
            frames,
            intrinsics,
            gt_poses,
            gt_depths,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    /// Subsequence of the given frame indices.
    pub fn select(&self, indices: &[usize]) -> Result<Sequence> {
        let frames = indices.iter().map(|&i| self.frames[i].clone()).collect();
        let pick = |v: &Vec<Pose6DoF>| indices.iter().map(|&i| v[i]).collect();
        let gt_poses = self.gt_poses.as_ref().map(pick);
        let gt_depths = self
            .gt_depths
            .as_ref()
            .map(|d| indices.iter().map(|&i| d[i].clone()).collect());
        Sequence::new(frames, self.intrinsics, gt_poses, gt_depths)
    }
}

/// A window of consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Snippet {
    /// Index of the first frame in the parent sequence.
    pub start: usize,
    pub frames: Vec<Frame>,
    pub gt_poses: Option<Vec<Pose6DoF>>,
    pub gt_depths: Option<Vec<DepthMap>>,
}

impl Snippet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Windows `[i, i + len)` for `i = 0, stride, 2·stride, …` that fit in the
/// sequence.
pub fn make_snippets(seq: &Sequence, len: usize, stride: usize) -> Result<Vec<Snippet>> {
    if len < 2 || stride < 1 {
        return Err(Error::Domain(format!(
            "snippet length must be ≥ 2 and stride ≥ 1 (got {len}, {stride})"
        )));
    }
    if seq.len() < len {
        return Ok(Vec::new());
    }
    Ok((0..=seq.len() - len)
        .step_by(stride)
        .map(|start| Snippet {
            start,
            frames: seq.frames[start..start + len].to_vec(),
            gt_poses: seq.gt_poses.as_ref().map(|p| p[start..start + len].to_vec()),
            gt_depths: seq.gt_depths.as_ref().map(|d| d[start..start + len].to_vec()),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn seq(n: usize) -> Sequence {
        let k = CameraIntrinsics::new(10.0, 10.0, 3.5, 3.5, 8, 8).unwrap();
        let frames = (0..n)
            .map(|i| Frame::new(Grid::new(8, 8, 0.5), i as f64).unwrap())
            .collect();
        Sequence::new(frames, k, None, None).unwrap()
    }

    #[test]
    fn snippet_counts() {
        assert_eq!(make_snippets(&seq(10), 5, 5).unwrap().len(), 2);
        assert_eq!(make_snippets(&seq(10), 5, 1).unwrap().len(), 6);
        assert!(make_snippets(&seq(10), 11, 1).unwrap().is_empty());
        let s = make_snippets(&seq(20), 5, 3).unwrap();
        assert_eq!(s.iter().map(|s| s.start).collect::<Vec<_>>(), vec![0, 3, 6, 9, 12, 15]);
        assert!(make_snippets(&seq(10), 1, 1).is_err());
    }

    #[test]
    fn snippets_preserve_order() {
        let s = make_snippets(&seq(10), 4, 3).unwrap();
        for sn in &s {
            for (j, f) in sn.frames.iter().enumerate() {
                assert_eq!(f.timestamp, (sn.start + j) as f64);
            }
        }
    }

    #[test]
    fn timestamps_must_increase() {
        let k = CameraIntrinsics::new(10.0, 10.0, 3.5, 3.5, 8, 8).unwrap();
        let f = Frame::new(Grid::new(8, 8, 0.5), 1.0).unwrap();
        assert!(Sequence::new(vec![f.clone(), f], k, None, None).is_err());
    }
}
