//! Unnormalized log-posterior for post-stack inversion and its analytic
//! gradient.
//!
//! The density combines a Gaussian data likelihood with Tikhonov and
//! smoothed anisotropic total-variation priors:
//!
//! ```text
//! log pi(m) = -1/2 w_d ||G m - d||^2
//!             - 1/2 w_tikh (||D_t m||^2 + ||D_x m||^2)
//!             - w_tv sum( phi_eps(D_t m) + phi_eps(D_x m) )
//! ```
//!
//! with `phi_eps(x) = sqrt(x^2 + eps^2)` smoothing the absolute value so the
//! gradient exists everywhere. The additive normalization constant is
//! dropped; it cancels in every use here.

use crate::error::{Error, Result};
use crate::linops::{Grid2D, LinOpSpec};

/// Posterior density model: modeling operator, observed data, and prior
/// hyperparameters. Immutable after construction; safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    op_g: LinOpSpec,
    d_obs: Grid2D,
    data_weight: f64,
    tikh_weight: f64,
    tv_weight: f64,
    tv_smooth_eps: f64,
    nt: usize,
    nx: usize,
}

impl PosteriorModel {
    /// Likelihood precision 1/sigma_d^2 for the default noise level
    /// sigma_d = 1e-2.
    pub const DEFAULT_DATA_WEIGHT: f64 = 1e4;
    pub const DEFAULT_TIKH_WEIGHT: f64 = 0.1;
    pub const DEFAULT_TV_WEIGHT: f64 = 0.1;
    pub const DEFAULT_TV_SMOOTH_EPS: f64 = 1e-8;

    /// Builds a model over the same grid as `d_obs`; `op_g` must preserve
    /// that shape.
    ///
    /// `data_weight == 0` disables the likelihood, which is occasionally
    /// useful (prior-only sampling, trivial proximal steps); negative
    /// weights are rejected.
    pub fn new(
        op_g: LinOpSpec,
        d_obs: Grid2D,
        data_weight: f64,
        tikh_weight: f64,
        tv_weight: f64,
        tv_smooth_eps: f64,
    ) -> Result<Self> {
        if !(data_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "data_weight must be nonnegative, got {data_weight}"
            )));
        }
        if !(tikh_weight >= 0.0) || !(tv_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prior weights must be nonnegative, got tikh={tikh_weight} tv={tv_weight}"
            )));
        }
        if !(tv_smooth_eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tv_smooth_eps must be positive, got {tv_smooth_eps}"
            )));
        }
        let (nt, nx) = d_obs.shape();
        let range = op_g.range_shape((nt, nx));
        if range != (nt, nx) {
            return Err(Error::ShapeMismatch(format!(
                "operator maps {nt}x{nx} to {}x{}, but observed data is {nt}x{nx}",
                range.0, range.1
            )));
        }
        Ok(Self {
            op_g,
            d_obs,
            data_weight,
            tikh_weight,
            tv_weight,
            tv_smooth_eps,
            nt,
            nx,
        })
    }

    pub fn op_g(&self) -> &LinOpSpec {
        &self.op_g
    }

    pub fn d_obs(&self) -> &Grid2D {
        &self.d_obs
    }

    pub fn data_weight(&self) -> f64 {
        self.data_weight
    }

    pub fn tikh_weight(&self) -> f64 {
        self.tikh_weight
    }

    pub fn tv_weight(&self) -> f64 {
        self.tv_weight
    }

    pub fn tv_smooth_eps(&self) -> f64 {
        self.tv_smooth_eps
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    fn check_shape(&self, m: &Grid2D) -> Result<()> {
        if m.shape() != (self.nt, self.nx) {
            return Err(Error::ShapeMismatch(format!(
                "model is {}x{}, expected {}x{}",
                m.nt(),
                m.nx(),
                self.nt,
                self.nx
            )));
        }
        Ok(())
    }

    /// Residual `G m - d_obs`.
    pub fn residual(&self, m: &Grid2D) -> Result<Grid2D> {
        self.check_shape(m)?;
        Ok(self.op_g.forward(m)?.sub(&self.d_obs))
    }

    /// Unweighted data misfit `1/2 ||G m - d_obs||^2`.
    pub fn data_misfit(&self, m: &Grid2D) -> Result<f64> {
        Ok(0.5 * self.residual(m)?.norm_sq())
    }

    /// Unnormalized log-density at `m`.
    pub fn log_posterior(&self, m: &Grid2D) -> Result<f64> {
        self.check_shape(m)?;
        let r = self.residual(m)?;
        let mut val = -0.5 * self.data_weight * r.norm_sq();
        if self.tikh_weight > 0.0 || self.tv_weight > 0.0 {
            let dt = LinOpSpec::DerivativeT.forward(m)?;
            let dx = LinOpSpec::DerivativeX.forward(m)?;
            if self.tikh_weight > 0.0 {
                val -= 0.5 * self.tikh_weight * (dt.norm_sq() + dx.norm_sq());
            }
            if self.tv_weight > 0.0 {
                let eps2 = self.tv_smooth_eps * self.tv_smooth_eps;
                let mut tv = 0.0;
                for v in dt.values() {
                    tv += (v * v + eps2).sqrt();
                }
                for v in dx.values() {
                    tv += (v * v + eps2).sqrt();
                }
                val -= self.tv_weight * tv;
            }
        }
        if !val.is_finite() {
            return Err(Error::Numerical(format!(
                "log-posterior evaluated to {val}"
            )));
        }
        Ok(val)
    }

    /// Analytic gradient of [`Self::log_posterior`]:
    ///
    /// ```text
    /// -w_d G^T (G m - d) - w_tikh (D_t^T D_t + D_x^T D_x) m
    ///   - w_tv (D_t^T psi_eps(D_t m) + D_x^T psi_eps(D_x m))
    /// ```
    ///
    /// with `psi_eps(x) = x / sqrt(x^2 + eps^2)`.
    pub fn grad_log_posterior(&self, m: &Grid2D) -> Result<Grid2D> {
        self.check_shape(m)?;
        let r = self.residual(m)?;
        let mut g = self.op_g.adjoint(&r)?;
        g.scale(-self.data_weight);
        if self.tikh_weight > 0.0 || self.tv_weight > 0.0 {
            let dt = LinOpSpec::DerivativeT.forward(m)?;
            let dx = LinOpSpec::DerivativeX.forward(m)?;
            if self.tikh_weight > 0.0 {
                g.scaled_add(-self.tikh_weight, &LinOpSpec::DerivativeT.adjoint(&dt)?);
                g.scaled_add(-self.tikh_weight, &LinOpSpec::DerivativeX.adjoint(&dx)?);
            }
            if self.tv_weight > 0.0 {
                let eps2 = self.tv_smooth_eps * self.tv_smooth_eps;
                let psi = |v: f64| v / (v * v + eps2).sqrt();
                g.scaled_add(-self.tv_weight, &LinOpSpec::DerivativeT.adjoint(&dt.map(psi))?);
                g.scaled_add(-self.tv_weight, &LinOpSpec::DerivativeX.adjoint(&dx.map(psi))?);
            }
        }
        Ok(g)
    }
}
