//! Probabilistic post-stack seismic impedance inversion.
//!
//! The library models observed seismic data as `d = G m + noise` where `m` is
//! log acoustic impedance and `G` convolves the time derivative of `m` with a
//! wavelet. Posterior samples are drawn with Stein variational gradient
//! descent, optionally regularized by a plug-and-play denoising step, and a
//! deterministic primal-dual solver serves as a point-estimate baseline.

pub mod denoisers;
pub mod error;
pub mod linops;
pub mod kernel;
pub mod pnp_pd;
pub mod posterior;
pub mod samplers;
pub mod stats;
pub mod synthdata;

pub use denoisers::{denoise, gaussian_denoise, median_filter, tv_prox, tv_prox_anisotropic, DenoiserKind, DenoiserSpec};
pub use error::{Error, Result};
pub use linops::{dot_test, post_stack_operator, ricker_wavelet, Grid2D, LinOpSpec, Wavelet};
pub use pnp_pd::{cg_solve, pnp_pd_run, prox_data, CgSolution, PDConfig};
pub use posterior::PosteriorModel;
pub use samplers::{cosine_step, init_ensemble, pnp_svgd_step, run_sampler, svgd_step, RunTrace, SamplerConfig, StepSchedule, Target, TraceRecord};
pub use synthdata::{bandpassed_noise, layered_model, make_observed, smooth_background, LayeredModelSpec};
pub use stats::{ensemble_mean, ensemble_std, pointwise_histogram, snr_db, trace_interval, PointwiseHistogram};
pub use kernel::{kernel_eval, median_bandwidth, phi_star, Ensemble, KernelEval};
