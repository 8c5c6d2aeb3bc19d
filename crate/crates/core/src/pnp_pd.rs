//! Deterministic plug-and-play primal-dual baseline.
//!
//! Produces a single MAP-style estimate instead of an ensemble. One iteration
//! is the literal three-line update
//!
//! ```text
//! y     <- y + sigma m_hat - H_{1/sigma}(y/sigma + m_hat)
//! m     <- prox_{tau f}(m - tau y)
//! m_hat <- m + theta (m - m_prev)
//! ```
//!
//! with `f` the weighted data misfit and H the configured denoiser at noise
//! level `1/sigma` (the denoiser strength is bound to the dual step, not
//! configured independently). The proximal step is a linear solve with the
//! normal-equation matrix `I + tau w G^T G`, evaluated matrix-free by
//! conjugate gradients.

use crate::denoisers::{denoise, DenoiserSpec};
use crate::error::{Error, Result};
use crate::linops::Grid2D;
use crate::posterior::PosteriorModel;

/// Primal-dual step sizes and solver knobs.
///
/// `tau` and `sigma_pd` must be positive with `tau * sigma_pd < 1` (the
/// step-size condition for an identity coupling operator); `theta` in [0, 1]
/// interpolates between no acceleration and full over-relaxation. The
/// denoiser's own strength field is ignored; the run substitutes
/// `1 / sigma_pd`.
#[derive(Debug, Clone)]
pub struct PDConfig {
    pub tau: f64,
    pub sigma_pd: f64,
    pub theta: f64,
    pub n_iters: usize,
    pub denoiser: DenoiserSpec,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
}

impl Default for PDConfig {
    fn default() -> Self {
        Self {
            tau: 0.9,
            sigma_pd: 0.9,
            theta: 1.0,
            n_iters: 100,
            denoiser: DenoiserSpec::identity(),
            cg_tol: 1e-8,
            cg_maxiter: 200,
        }
    }
}

impl PDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.sigma_pd > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "steps must be positive, got tau={} sigma_pd={}",
                self.tau, self.sigma_pd
            )));
        }
        if !(self.tau * self.sigma_pd < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need tau * sigma_pd < 1 for convergence, got {}",
                self.tau * self.sigma_pd
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cg_tol must be positive, got {}",
                self.cg_tol
            )));
        }
        if self.cg_maxiter == 0 {
            return Err(Error::InvalidArgument(
                "cg_maxiter must be at least 1".into(),
            ));
        }
        self.bound_denoiser().validate()
    }

    /// The denoiser actually applied: configured kind at strength
    /// `1 / sigma_pd`.
    pub fn bound_denoiser(&self) -> DenoiserSpec {
        self.denoiser.with_strength(1.0 / self.sigma_pd)
    }
}

/// Conjugate-gradient result. `rel_residual` is the recursively updated
/// residual norm divided by `||b||`, not a recomputed one; `converged` is
/// false when the loop stopped at `maxiter` instead of at the tolerance.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Grid2D,
    pub iters: usize,
    pub converged: bool,
    pub rel_residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A` given only the
/// matrix-vector product, starting from zero.
///
/// Stops when the relative residual drops to `tol` or after `maxiter`
/// iterations, whichever comes first. A search direction with nonpositive
/// curvature means `A` was not positive definite and is reported as a
/// numerical failure.
pub fn cg_solve(
    apply_a: impl Fn(&Grid2D) -> Result<Grid2D>,
    b: &Grid2D,
    tol: f64,
    maxiter: usize,
) -> Result<CgSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cg tolerance must be positive, got {tol}"
        )));
    }
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: Grid2D::zeros(b.nt(), b.nx()),
            iters: 0,
            converged: true,
            rel_residual: 0.0,
        });
    }
    let mut x = Grid2D::zeros(b.nt(), b.nx());
    let mut r = b.clone();
    let mut p = b.clone();
    let mut rs = r.norm_sq();
    let mut rel = rs.sqrt() / b_norm;
    let mut iters = 0;
    while rel > tol && iters < maxiter {
        let ap = apply_a(&p)?;
        if ap.shape() != b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "cg operator returned {}x{}, expected {}x{}",
                ap.nt(),
                ap.nx(),
                b.nt(),
                b.nx()
            )));
        }
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!(
                "cg breakdown: direction curvature {pap} (operator not positive definite)"
            )));
        }
        let alpha = rs / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        iters += 1;
        let rs_next = r.norm_sq();
        rel = rs_next.sqrt() / b_norm;
        let beta = rs_next / rs;
        rs = rs_next;
        if rel > tol {
            p.scale(beta);
            p.scaled_add(1.0, &r);
        }
    }
    Ok(CgSolution {
        x,
        iters,
        converged: rel <= tol,
        rel_residual: rel,
    })
}

/// Proximal operator of the weighted data misfit
/// `f(y) = w/2 ||G y - d||^2` at step `tau`:
///
/// ```text
/// prox_{tau f}(v) = argmin_y 1/(2 tau) ||y - v||^2 + f(y)
/// ```
///
/// computed by solving `(I + tau w G^T G) y = v + tau w G^T d` with CG.
/// `w = 0` makes `f` vanish and `v` is returned unchanged.
///
/// The solve is posed for the correction `y - v`, whose right-hand side
/// `tau w G^T (d - G v)` lies in the range of `G^T`. Every CG iterate then
/// stays in that range, so components of `v` invisible to `G` (notably the
/// mean of each trace) pass through untouched even when `cg_maxiter` cuts
/// the solve short.
pub fn prox_data(model: &PosteriorModel, v: &Grid2D, tau: f64, cfg: &PDConfig) -> Result<Grid2D> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prox step must be positive, got {tau}"
        )));
    }
    if v.shape() != (model.nt(), model.nx()) {
        return Err(Error::ShapeMismatch(format!(
            "prox input is {}x{}, model expects {}x{}",
            v.nt(),
            v.nx(),
            model.nt(),
            model.nx()
        )));
    }
    let w = tau * model.data_weight();
    if w == 0.0 {
        return Ok(v.clone());
    }
    let g = model.op_g();
    let apply = |m: &Grid2D| -> Result<Grid2D> {
        let mut out = g.adjoint(&g.forward(m)?)?;
        out.scale(w);
        out.scaled_add(1.0, m);
        Ok(out)
    };
    let mut residual = model.d_obs().clone();
    residual.scaled_add(-1.0, &g.forward(v)?);
    let mut rhs = g.adjoint(&residual)?;
    rhs.scale(w);
    let sol = cg_solve(apply, &rhs, cfg.cg_tol, cfg.cg_maxiter)?;
    let mut x = sol.x;
    x.scaled_add(1.0, v);
    Ok(x)
}

fn at_iteration(t: usize, e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("iteration {t}: {msg}")),
        Error::ShapeMismatch(msg) => Error::ShapeMismatch(format!("iteration {t}: {msg}")),
        Error::Numerical(msg) => Error::Numerical(format!("iteration {t}: {msg}")),
    }
}

/// Runs the primal-dual iteration from `m0` with dual variable `y = 0`.
///
/// Returns the final primal iterate and the unweighted data misfit
/// `1/2 ||G m - d||^2` recorded at `m0` and after every iteration
/// (`n_iters + 1` entries).
pub fn pnp_pd_run(
    model: &PosteriorModel,
    m0: &Grid2D,
    cfg: &PDConfig,
) -> Result<(Grid2D, Vec<f64>)> {
    cfg.validate()?;
    if m0.shape() != (model.nt(), model.nx()) {
        return Err(Error::ShapeMismatch(format!(
            "start model is {}x{}, model expects {}x{}",
            m0.nt(),
            m0.nx(),
            model.nt(),
            model.nx()
        )));
    }
    let denoiser = cfg.bound_denoiser();
    let sigma = cfg.sigma_pd;
    let mut m = m0.clone();
    let mut m_hat = m.clone();
    let mut y = Grid2D::zeros(m.nt(), m.nx());
    let mut misfit_trace = Vec::with_capacity(cfg.n_iters + 1);
    misfit_trace.push(model.data_misfit(&m)?);
    for t in 0..cfg.n_iters {
        let mut z = y.clone();
        z.scale(1.0 / sigma);
        z.scaled_add(1.0, &m_hat);
        let h = denoise(&denoiser, &z).map_err(|e| at_iteration(t, e))?;
        y.scaled_add(sigma, &m_hat);
        y.scaled_add(-1.0, &h);

        let mut v = m.clone();
        v.scaled_add(-cfg.tau, &y);
        let m_next = prox_data(model, &v, cfg.tau, cfg).map_err(|e| at_iteration(t, e))?;

        let step = m_next.sub(&m);
        m_hat = m_next.clone();
        m_hat.scaled_add(cfg.theta, &step);
        m = m_next;
        misfit_trace.push(model.data_misfit(&m)?);
    }
    Ok((m, misfit_trace))
}
