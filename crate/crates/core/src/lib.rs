//! Bilevel estimation of spatially adaptive weighted-TV regularization maps
//! for Gaussian denoising.
//!
//! The lower level is the smoothed weighted-TV energy ([`energy`]) solved by
//! accelerated gradient descent ([`lower`]). The upper level minimizes either
//! the residual whiteness or the MSE against a reference ([`losses`]) using
//! hypergradients from implicit differentiation ([`hypergrad`]) inside a plain
//! gradient-descent loop ([`bilevel`]). [`calibration`] estimates the
//! whiteness early-stopping threshold from clean images.
//!
//! All reductions are sequential, so every result is bit-reproducible.

pub mod bilevel;
pub mod calibration;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod hypergrad;
pub mod image;
pub mod io;
pub mod losses;
pub mod lower;
pub mod metrics;
pub mod noise;

pub use bilevel::{
    default_beta0, early_stop_check, gd_bil, gd_bil_observed, BilevelConfig, BilevelOutcome,
    BilevelTrace, IterateView, StepScaling, StopReason, TraceRecord, Q_BAR_BSD400, Q_BAR_COCO,
};
pub use energy::{
    energy_grad, energy_value, hess_vec, huber_grad, huber_hess, huber_value, lipschitz_bound,
    HessianOp, ParamMap, ParamMode,
};
pub use error::{Error, Result};
pub use hypergrad::{cross_jacobian_transpose, hess_solve, hypergrad, CgConfig, HypergradResult, UpperLoss};
pub use image::{grad_adjoint, grad_apply, GradField, Image};
pub use losses::{autocorrelation, circular_xcorr, mse_eval, whiteness_eval, whiteness_value, LossEval, LossKind};
pub use lower::{sc_agd, LowerConfig, LowerSolveResult};
pub use metrics::{ipsnr, issim, psnr, ssim, QualityMonitor};
pub use noise::{add_noise, sample_noise, NoiseKind, NoiseSpec};
