//! Loss terms, their weighted total, and the evaluation metrics.

mod losses;
mod metrics;

#[cfg(test)]
mod tests;

pub use losses::{
    loss_deform, loss_flatten, loss_img, loss_iou, loss_laplacian, loss_sym, total_loss, weighted_total,
    DeformNorm, LossComponents, LossNodes, LossReport, LossWeights, ObjectiveError, DEFORM_EPS,
};
pub use metrics::{mask_iou, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
