//! Ensemble summary statistics: mean and std fields, pointwise histograms,
//! per-trace credible intervals, and SNR.

use crate::error::{Error, Result};
use crate::kernel::Ensemble;
use crate::linops::Grid2D;

/// SNR values are capped here; reached only when the error is (numerically)
/// zero.
pub const SNR_CAP_DB: f64 = 300.0;

/// Histogram of one pixel's values across the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseHistogram {
    pub location: (usize, usize),
    /// `bins + 1` strictly ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_samples: usize,
}

/// Arithmetic mean over particles, reshaped to the model grid.
pub fn ensemble_mean(e: &Ensemble) -> Grid2D {
    let d = e.dim();
    let mut acc = vec![0.0; d];
    for row in e.rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = 1.0 / e.n() as f64;
    let mut it = acc.into_iter().map(|a| a * inv);
    // Unchecked build: the sum of finite particles can still overflow, and an
    // infinite mean in a diagnostic should not abort the run.
    Grid2D::from_fn(e.nt(), e.nx(), |_, _| it.next().unwrap())
}

/// Per-pixel sample standard deviation with 1/(n-1) normalization, two-pass.
pub fn ensemble_std(e: &Ensemble) -> Result<Grid2D> {
    if e.n() < 2 {
        return Err(Error::InvalidArgument(
            "standard deviation needs at least two particles".into(),
        ));
    }
    let d = e.dim();
    let mean = ensemble_mean(e);
    let mut acc = vec![0.0; d];
    for row in e.rows() {
        for l in 0..d {
            let t = row[l] - mean.values()[l];
            acc[l] += t * t;
        }
    }
    let inv = 1.0 / (e.n() - 1) as f64;
    for a in &mut acc {
        *a = (*a * inv).sqrt();
    }
    // Particles are finite by the ensemble invariant, so a rejected build
    // means the squared deviations overflowed.
    Grid2D::from_values(e.nt(), e.nx(), acc)
        .map_err(|_| Error::Numerical("ensemble spread overflowed".into()))
}

/// Equal-width histogram of the values at pixel `(it, ix)` across particles,
/// spanning their min..max; the maximum lands in the last bin. A degenerate
/// (constant) sample gets a unit-width range centered on the value.
pub fn pointwise_histogram(
    e: &Ensemble,
    it: usize,
    ix: usize,
    bins: usize,
) -> Result<PointwiseHistogram> {
    if bins < 1 {
        return Err(Error::InvalidArgument("histogram needs bins >= 1".into()));
    }
    if it >= e.nt() || ix >= e.nx() {
        return Err(Error::InvalidArgument(format!(
            "pixel ({it}, {ix}) outside {}x{} grid",
            e.nt(),
            e.nx()
        )));
    }
    let l = it * e.nx() + ix;
    let values: Vec<f64> = e.rows().map(|row| row[l]).collect();
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for &v in &values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in &values {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut edges = Vec::with_capacity(bins + 1);
    for k in 0..=bins {
        edges.push(lo + k as f64 * width);
    }
    edges[bins] = hi;
    Ok(PointwiseHistogram {
        location: (it, ix),
        edges,
        counts,
        n_samples: values.len(),
    })
}

/// `10 log10(||reference||^2 / ||reference - estimate||^2)`, capped at
/// [`SNR_CAP_DB`].
pub fn snr_db(reference: &Grid2D, estimate: &Grid2D) -> Result<f64> {
    if reference.shape() != estimate.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reference is {}x{}, estimate is {}x{}",
            reference.nt(),
            reference.nx(),
            estimate.nt(),
            estimate.nx()
        )));
    }
    let sig = reference.norm_sq();
    if sig == 0.0 {
        return Err(Error::InvalidArgument(
            "SNR reference must not be all zero".into(),
        ));
    }
    let err = reference.sub(estimate).norm_sq();
    if err == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (sig / err).log10()).min(SNR_CAP_DB))
}

/// Mean and one-standard-deviation band along trace `ix`: `(mean, lo, hi)`,
/// each `nt` long.
pub fn trace_interval(e: &Ensemble, ix: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if ix >= e.nx() {
        return Err(Error::InvalidArgument(format!(
            "trace {ix} outside {} traces",
            e.nx()
        )));
    }
    let mean = ensemble_mean(e);
    let std = ensemble_std(e)?;
    let nt = e.nt();
    let mut m = Vec::with_capacity(nt);
    let mut lo = Vec::with_capacity(nt);
    let mut hi = Vec::with_capacity(nt);
    for it in 0..nt {
        let mu = mean.get(it, ix);
        let s = std.get(it, ix);
        m.push(mu);
        lo.push(mu - s);
        hi.push(mu + s);
    }
    Ok((m, lo, hi))
}
