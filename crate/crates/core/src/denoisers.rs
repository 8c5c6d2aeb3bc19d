//! Pluggable image denoisers: the H in the plug-and-play updates.
//!
//! Each denoiser maps a `Grid2D` image to one of the same shape. The
//! `strength` field of [`DenoiserSpec`] is the noise parameter sigma of
//! H_sigma and maps onto each kind's internal parameter: Gaussian blur width
//! `sigma_blur = strength`, TV weight `lambda = strength^2 / 2` (the MAP
//! correspondence for Gaussian noise of variance sigma), and the median
//! filter ignores it.

use crate::error::{Error, Result};
use crate::linops::{Grid2D, LinOpSpec};

/// Structural choice of denoiser. Noise-level-dependent parameters come from
/// [`DenoiserSpec::strength`]; kinds here carry only shape/iteration
/// parameters. A learned `external` kind is a deliberate extension point,
/// not implemented.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserKind {
    Identity,
    Gaussian,
    Median { window: usize },
    TvProx { inner_iters: usize, anisotropic: bool },
}

/// A denoiser kind plus its noise parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    pub strength: f64,
}

impl DenoiserSpec {
    pub const DEFAULT_TV_INNER_ITERS: usize = 50;

    pub fn identity() -> Self {
        Self {
            kind: DenoiserKind::Identity,
            strength: 0.0,
        }
    }

    pub fn gaussian(strength: f64) -> Self {
        Self {
            kind: DenoiserKind::Gaussian,
            strength,
        }
    }

    pub fn median(window: usize) -> Self {
        Self {
            kind: DenoiserKind::Median { window },
            strength: 0.0,
        }
    }

    pub fn tv_prox(strength: f64, inner_iters: usize) -> Self {
        Self {
            kind: DenoiserKind::TvProx {
                inner_iters,
                anisotropic: false,
            },
            strength,
        }
    }

    /// Same kind with a different noise parameter (used by the primal-dual
    /// driver, whose noise level is tied to its dual step).
    pub fn with_strength(&self, strength: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            strength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "denoiser strength must be nonnegative, got {}",
                self.strength
            )));
        }
        match self.kind {
            DenoiserKind::Identity => Ok(()),
            DenoiserKind::Gaussian => {
                if self.strength > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(
                        "gaussian denoiser needs strength > 0".into(),
                    ))
                }
            }
            DenoiserKind::Median { window } => {
                if window >= 3 && window % 2 == 1 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "median window must be odd and >= 3, got {window}"
                    )))
                }
            }
            DenoiserKind::TvProx { inner_iters, .. } => {
                if inner_iters >= 1 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(
                        "tv_prox needs inner_iters >= 1".into(),
                    ))
                }
            }
        }
    }
}

/// Applies the configured denoiser; output shape equals input shape.
pub fn denoise(spec: &DenoiserSpec, img: &Grid2D) -> Result<Grid2D> {
    spec.validate()?;
    match spec.kind {
        DenoiserKind::Identity => Ok(img.clone()),
        DenoiserKind::Gaussian => gaussian_denoise(img, spec.strength),
        DenoiserKind::Median { window } => median_filter(img, window),
        DenoiserKind::TvProx {
            inner_iters,
            anisotropic,
        } => {
            let lambda = 0.5 * spec.strength * spec.strength;
            tv_prox_impl(img, lambda, inner_iters, anisotropic)
        }
    }
}

/// Separable convolution with a normalized Gaussian kernel truncated at
/// +-4 sigma, replicate boundaries.
pub fn gaussian_denoise(img: &Grid2D, sigma_blur: f64) -> Result<Grid2D> {
    if !(sigma_blur > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma_blur must be positive, got {sigma_blur}"
        )));
    }
    let radius = (4.0 * sigma_blur).ceil() as isize;
    let mut weights = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        let t = k as f64;
        weights.push((-t * t / (2.0 * sigma_blur * sigma_blur)).exp());
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }

    let (nt, nx) = img.shape();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    // Pass along time, then along traces.
    let mut tmp = Grid2D::zeros(nt, nx);
    for it in 0..nt as isize {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (w, k) in weights.iter().zip(-radius..=radius) {
                acc += w * img.get(clamp(it + k, nt), ix);
            }
            tmp.set(it as usize, ix, acc);
        }
    }
    let mut out = Grid2D::zeros(nt, nx);
    for it in 0..nt {
        for ix in 0..nx as isize {
            let mut acc = 0.0;
            for (w, k) in weights.iter().zip(-radius..=radius) {
                acc += w * tmp.get(it, clamp(ix + k, nx));
            }
            out.set(it, ix as usize, acc);
        }
    }
    Ok(out)
}

/// Moving 2-D median over an odd `window x window` neighborhood, replicate
/// boundaries.
pub fn median_filter(img: &Grid2D, window: usize) -> Result<Grid2D> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "median window must be odd and >= 3, got {window}"
        )));
    }
    let half = (window / 2) as isize;
    let (nt, nx) = img.shape();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut out = Grid2D::zeros(nt, nx);
    let mut buf = Vec::with_capacity(window * window);
    for it in 0..nt as isize {
        for ix in 0..nx as isize {
            buf.clear();
            for dt in -half..=half {
                for dx in -half..=half {
                    buf.push(img.get(clamp(it + dt, nt), clamp(ix + dx, nx)));
                }
            }
            buf.sort_unstable_by(f64::total_cmp);
            out.set(it as usize, ix as usize, buf[buf.len() / 2]);
        }
    }
    Ok(out)
}

/// Isotropic TV proximal denoiser: approximately minimizes
/// `1/2 ||y - img||^2 + lambda TV(y)` by Chambolle's projected dual
/// iteration with step 1/8.
pub fn tv_prox(img: &Grid2D, lambda: f64, inner_iters: usize) -> Result<Grid2D> {
    tv_prox_impl(img, lambda, inner_iters, false)
}

/// Anisotropic variant: TV(y) sums `|D_t y| + |D_x y|` instead of the
/// pointwise gradient magnitude.
pub fn tv_prox_anisotropic(img: &Grid2D, lambda: f64, inner_iters: usize) -> Result<Grid2D> {
    tv_prox_impl(img, lambda, inner_iters, true)
}

fn tv_prox_impl(
    img: &Grid2D,
    lambda: f64,
    inner_iters: usize,
    anisotropic: bool,
) -> Result<Grid2D> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tv lambda must be nonnegative, got {lambda}"
        )));
    }
    if inner_iters < 1 {
        return Err(Error::InvalidArgument(
            "tv_prox needs inner_iters >= 1".into(),
        ));
    }
    if lambda == 0.0 {
        return Ok(img.clone());
    }
    let tau = 0.125;
    let (nt, nx) = img.shape();
    let mut pt = Grid2D::zeros(nt, nx);
    let mut px = Grid2D::zeros(nt, nx);
    for _ in 0..inner_iters {
        // w = div p - img/lambda, with div the negative adjoint of the
        // forward-difference gradient.
        let mut w = LinOpSpec::DerivativeT.adjoint(&pt)?;
        w.scaled_add(1.0, &LinOpSpec::DerivativeX.adjoint(&px)?);
        w.scale(-1.0);
        w.scaled_add(-1.0 / lambda, img);
        let gt = LinOpSpec::DerivativeT.forward(&w)?;
        let gx = LinOpSpec::DerivativeX.forward(&w)?;
        for l in 0..nt * nx {
            let a = gt.values()[l];
            let b = gx.values()[l];
            if anisotropic {
                pt.values_mut()[l] = (pt.values()[l] + tau * a) / (1.0 + tau * a.abs());
                px.values_mut()[l] = (px.values()[l] + tau * b) / (1.0 + tau * b.abs());
            } else {
                let mag = (a * a + b * b).sqrt();
                pt.values_mut()[l] = (pt.values()[l] + tau * a) / (1.0 + tau * mag);
                px.values_mut()[l] = (px.values()[l] + tau * b) / (1.0 + tau * mag);
            }
        }
    }
    // y = img - lambda div p.
    let mut y = LinOpSpec::DerivativeT.adjoint(&pt)?;
    y.scaled_add(1.0, &LinOpSpec::DerivativeX.adjoint(&px)?);
    y.scale(lambda);
    y.scaled_add(1.0, img);
    Ok(y)
}
