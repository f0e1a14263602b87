//! Loss terms and the weighted multi-scale total.

pub mod alignment;
pub mod gradcheck;
pub mod inertia;
pub mod photometric;
pub mod total;

pub use alignment::{alignment_3d_loss, AlignmentLoss};
pub use gradcheck::{grad_check, grad_check_all, BlockReport, GradCheckConfig, LossTerm};
pub use inertia::{hinge_ratio, inertia_loss, motion_series, InertiaLoss, InertiaParams, MotionSeries};
pub use photometric::{reconstruction_loss, ssim_loss, warp_backward, PixelLoss, WarpGradient};
pub use total::{Gradients, LossBreakdown, LossWeights, Objective, PairMode, ScaleTerms};
