//! Planar Gaussian splatting: fitting, rendering, fusion and image metrics.

mod experiment;
mod fit;
mod fusion;
mod image;
mod metrics;
mod model;
mod render;

pub use experiment::{
    crop_grid, evaluate_model, fusion_experiment, reference_image, standard_sites, FusionOutcome,
    Quality,
};
pub use fit::{
    fit, initialize, loss_and_gradients, refine, total_loss, FitParams, FitTrace, Target,
};
pub use fusion::{aggregate_models, merge_by_owner, merge_models, AggregateParams, CanvasFrame};
pub use image::ImageBuffer;
pub use metrics::{
    boundary_strip_mask, loss, loss_with_grad, masked_psnr, masked_ssim, mse, psnr, ssim,
    ssim_with_grad, DEFAULT_LAMBDA,
};
pub use model::{project_covariance, Conic, Gaussian2D, Mat3, SplatModel, View, MIN_ALPHA};
pub use render::{render, render_backward, Gradients, ParamGrad, PARAMS};
