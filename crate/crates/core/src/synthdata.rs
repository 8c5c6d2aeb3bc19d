//! Synthetic experiment factory: layered log-impedance models, smooth
//! backgrounds, band-passed noise, and observed-data synthesis.
//!
//! Everything here is deterministic given its arguments; noise generators
//! take explicit seeds. Geometry is a stand-in for field models: piecewise
//! constant layers with a configurable linear dip.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::denoisers::gaussian_denoise;
use crate::error::{Error, Result};
use crate::linops::{post_stack_operator, Grid2D, LinOpSpec, Wavelet};

/// Lateral smoothing half-width (traces) used by [`make_observed`]'s noise.
pub const DEFAULT_X_HALFWIDTH: usize = 2;

/// Piecewise-constant layered model description.
///
/// Each `(depth_fraction, log_ai_value)` entry paints its value from row
/// `round(depth_fraction * nt) + round(dip_per_trace * j)` downward at trace
/// `j`; the first entry also fills everything above its interface, so its
/// fraction only fixes the ordering. Depth fractions must be strictly
/// ascending and strictly inside (0, 1).
///
/// `seed` is consumed by the observation-synthesis stage (noise), not by the
/// geometry, which is deterministic.
#[derive(Debug, Clone)]
pub struct LayeredModelSpec {
    pub nt: usize,
    pub nx: usize,
    pub interfaces: Vec<(f64, f64)>,
    pub dip_per_trace: f64,
    pub seed: u64,
}

impl LayeredModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 || self.nx == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must be nonempty, got {}x{}",
                self.nt, self.nx
            )));
        }
        if self.interfaces.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 layers, got {}",
                self.interfaces.len()
            )));
        }
        let mut prev = 0.0;
        for &(frac, value) in &self.interfaces {
            if !(frac > prev && frac < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "depth fractions must be strictly ascending within (0, 1), got {frac} after {prev}"
                )));
            }
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "layer value must be finite, got {value}"
                )));
            }
            prev = frac;
        }
        if !self.dip_per_trace.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "dip must be finite, got {}",
                self.dip_per_trace
            )));
        }
        Ok(())
    }
}

/// Builds the piecewise-constant log-impedance field described by `spec`.
///
/// At trace `j`, layer `k` starts at row
/// `round(frac_k * nt) + round(dip_per_trace * j)`, clamped to the grid; the
/// first layer starts at row 0 regardless.
pub fn layered_model(spec: &LayeredModelSpec) -> Result<Grid2D> {
    spec.validate()?;
    let nt = spec.nt as i64;
    let mut g = Grid2D::zeros(spec.nt, spec.nx);
    for j in 0..spec.nx {
        let shift = (spec.dip_per_trace * j as f64).round() as i64;
        for (idx, &(frac, value)) in spec.interfaces.iter().enumerate() {
            let top = if idx == 0 {
                0
            } else {
                ((frac * nt as f64).round() as i64 + shift).clamp(0, nt) as usize
            };
            for it in top..spec.nt {
                g.set(it, j, value);
            }
        }
    }
    Ok(g)
}

/// Heavy Gaussian blur of a model, the usual choice of inversion starting
/// point and prior mean. Thin wrapper over [`gaussian_denoise`].
pub fn smooth_background(m: &Grid2D, sigma_blur: f64) -> Result<Grid2D> {
    gaussian_denoise(m, sigma_blur)
}

/// Seeded Gaussian noise convolved with `wavelet` along time and a
/// normalized triangle kernel of the given half-width along traces, then
/// rescaled so its RMS equals `amplitude` exactly.
pub fn bandpassed_noise(
    nt: usize,
    nx: usize,
    amplitude: f64,
    wavelet: &Wavelet,
    x_halfwidth: usize,
    seed: u64,
) -> Result<Grid2D> {
    if nt == 0 || nx == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid must be nonempty, got {nt}x{nx}"
        )));
    }
    if !(amplitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise amplitude must be nonnegative, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(Grid2D::zeros(nt, nx));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut white = Grid2D::zeros(nt, nx);
    for v in white.values_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let banded = LinOpSpec::ConvolveT(wavelet.clone()).forward(&white)?;

    // Triangle weights hw+1-|k| over k in [-hw, hw], normalized; zero-padded
    // at the lateral edges like the time-axis convolution.
    let hw = x_halfwidth as i64;
    let weights: Vec<f64> = (-hw..=hw).map(|k| (hw + 1 - k.abs()) as f64).collect();
    let wsum: f64 = weights.iter().sum();
    let smooth = Grid2D::from_fn(nt, nx, |it, jx| {
        let mut acc = 0.0;
        for (wi, wgt) in weights.iter().enumerate() {
            let src = jx as i64 + (wi as i64 - hw);
            if src >= 0 && (src as usize) < nx {
                acc += wgt * banded.get(it, src as usize);
            }
        }
        acc / wsum
    });

    let rms = smooth.rms();
    if rms == 0.0 {
        return Err(Error::Numerical(
            "band-passed field is identically zero; cannot rescale".into(),
        ));
    }
    let mut out = smooth;
    out.scale(amplitude / rms);
    Ok(out)
}

/// Synthesizes observed data `d = G m_true + noise` with the post-stack
/// operator built from `wavelet`. `noise_amplitude` is the absolute RMS of
/// the added noise; the realization is returned alongside the data for
/// diagnostics.
pub fn make_observed(
    m_true: &Grid2D,
    wavelet: &Wavelet,
    noise_amplitude: f64,
    seed: u64,
) -> Result<(Grid2D, Grid2D)> {
    let op = post_stack_operator(wavelet.clone());
    let clean = op.forward(m_true)?;
    if noise_amplitude == 0.0 {
        let zero = Grid2D::zeros(m_true.nt(), m_true.nx());
        return Ok((clean, zero));
    }
    let noise = bandpassed_noise(
        m_true.nt(),
        m_true.nx(),
        noise_amplitude,
        wavelet,
        DEFAULT_X_HALFWIDTH,
        seed,
    )?;
    let mut d_obs = clean;
    d_obs.scaled_add(1.0, &noise);
    Ok((d_obs, noise))
}
