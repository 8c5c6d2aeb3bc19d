//! Dense 2-D fields, wavelets, and matrix-free linear operators with exact
//! adjoints.
//!
//! The post-stack modeling operator is `G = W D`: a first-order derivative
//! along time followed by per-trace convolution with a seismic wavelet. All
//! operators are applied matrix-free; [`dot_test`] verifies each
//! operator/adjoint pair numerically.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense real-valued field of `nt` time samples by `nx` traces.
///
/// Values are stored row-major by time: entry `(it, ix)` lives at
/// `it * nx + ix`. The same layout is the flattened particle representation
/// used by the samplers, so flatten/unflatten is the identity on storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    nt: usize,
    nx: usize,
    values: Vec<f64>,
}

impl Grid2D {
    /// All-zero field.
    pub fn zeros(nt: usize, nx: usize) -> Self {
        Self {
            nt,
            nx,
            values: vec![0.0; nt * nx],
        }
    }

    /// Builds a field from row-major values, checking length and finiteness.
    pub fn from_values(nt: usize, nx: usize, values: Vec<f64>) -> Result<Self> {
        if nt == 0 || nx == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dims must be positive, got {nt}x{nx}"
            )));
        }
        if values.len() != nt * nx {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {nt}x{nx} grid, got {}",
                nt * nx,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "grid values must all be finite".into(),
            ));
        }
        Ok(Self { nt, nx, values })
    }

    /// Builds a field by evaluating `f(it, ix)` at every sample.
    pub fn from_fn(nt: usize, nx: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(nt * nx);
        for it in 0..nt {
            for ix in 0..nx {
                values.push(f(it, ix));
            }
        }
        Self { nt, nx, values }
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nt, self.nx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, it: usize, ix: usize) -> f64 {
        self.values[it * self.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, it: usize, ix: usize, v: f64) {
        self.values[it * self.nx + ix] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Inner product with another field of the same shape.
    pub fn dot(&self, other: &Grid2D) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Root mean square of all samples.
    pub fn rms(&self) -> f64 {
        (self.norm_sq() / self.values.len() as f64).sqrt()
    }

    /// `self += a * other`.
    pub fn scaled_add(&mut self, a: f64, other: &Grid2D) {
        debug_assert_eq!(self.shape(), other.shape());
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// `self - other` as a new field.
    pub fn sub(&self, other: &Grid2D) -> Grid2D {
        debug_assert_eq!(self.shape(), other.shape());
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Grid2D {
            nt: self.nt,
            nx: self.nx,
            values,
        }
    }

    /// Elementwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D {
            nt: self.nt,
            nx: self.nx,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Sampled seismic wavelet with odd-length support centered at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    samples: Vec<f64>,
    dt: f64,
    peak_freq: f64,
}

impl Wavelet {
    /// Wraps raw samples; the length must be odd so the center sample sits at
    /// t = 0.
    pub fn new(samples: Vec<f64>, dt: f64, peak_freq: f64) -> Result<Self> {
        if samples.len() % 2 == 0 || samples.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "wavelet length must be odd, got {}",
                samples.len()
            )));
        }
        if dt <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "wavelet dt must be positive, got {dt}"
            )));
        }
        Ok(Self {
            samples,
            dt,
            peak_freq,
        })
    }

    /// Unit impulse of the given half-length; convolution with it is the
    /// identity.
    pub fn impulse(half_len: usize, dt: f64) -> Self {
        let mut samples = vec![0.0; 2 * half_len + 1];
        samples[half_len] = 1.0;
        Self {
            samples,
            dt,
            peak_freq: 0.0,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn peak_freq(&self) -> f64 {
        self.peak_freq
    }

    /// Index of the t = 0 sample.
    pub fn center(&self) -> usize {
        self.samples.len() / 2
    }

    pub fn half_len(&self) -> usize {
        self.samples.len() / 2
    }
}

/// Ricker wavelet `w(t) = (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2)` sampled on
/// `2 * half_len + 1` points centered at t = 0.
pub fn ricker_wavelet(peak_freq: f64, dt: f64, half_len: usize) -> Result<Wavelet> {
    if peak_freq <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ricker peak frequency must be positive, got {peak_freq}"
        )));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ricker dt must be positive, got {dt}"
        )));
    }
    if half_len < 1 {
        return Err(Error::InvalidArgument(
            "ricker half_len must be at least 1".into(),
        ));
    }
    let n = 2 * half_len + 1;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = (i as f64 - half_len as f64) * dt;
        let a = (std::f64::consts::PI * peak_freq * t).powi(2);
        samples.push((1.0 - 2.0 * a) * (-a).exp());
    }
    Wavelet::new(samples, dt, peak_freq)
}

/// Declarative matrix-free linear operator on [`Grid2D`] fields.
///
/// Derivatives use a forward difference with the last row/column mapped to
/// zero, which makes the adjoint an exact transpose. Convolution is
/// "same"-length with zero-padded edges; its adjoint is zero-padded
/// correlation.
#[derive(Debug, Clone, PartialEq)]
pub enum LinOpSpec {
    /// The identity map.
    Identity,
    /// First-order forward difference along time; last row is zero.
    DerivativeT,
    /// First-order forward difference along traces; last column is zero.
    DerivativeX,
    /// Per-trace convolution with a wavelet, same-length output.
    ConvolveT(Wavelet),
    /// Vertical stack of [`LinOpSpec::DerivativeT`] over
    /// [`LinOpSpec::DerivativeX`], mapping `nt x nx` to `2 nt x nx`.
    StackTV,
    /// Composition applied right-to-left; `Compose([])` is the identity.
    Compose(Vec<LinOpSpec>),
}

impl LinOpSpec {
    /// Output shape of the forward map for a given domain shape.
    pub fn range_shape(&self, domain: (usize, usize)) -> (usize, usize) {
        match self {
            LinOpSpec::Identity
            | LinOpSpec::DerivativeT
            | LinOpSpec::DerivativeX
            | LinOpSpec::ConvolveT(_) => domain,
            LinOpSpec::StackTV => (2 * domain.0, domain.1),
            LinOpSpec::Compose(ops) => ops
                .iter()
                .rev()
                .fold(domain, |shape, op| op.range_shape(shape)),
        }
    }

    /// Applies the operator (or its exact adjoint) to a field.
    pub fn apply(&self, input: &Grid2D, adjoint: bool) -> Result<Grid2D> {
        match self {
            LinOpSpec::Identity => Ok(input.clone()),
            LinOpSpec::DerivativeT => Ok(if adjoint {
                derivative_t_adjoint(input)
            } else {
                derivative_t(input)
            }),
            LinOpSpec::DerivativeX => Ok(if adjoint {
                derivative_x_adjoint(input)
            } else {
                derivative_x(input)
            }),
            LinOpSpec::ConvolveT(w) => Ok(convolve_t(input, w.samples(), adjoint)),
            LinOpSpec::StackTV => {
                if adjoint {
                    stack_tv_adjoint(input)
                } else {
                    Ok(stack_tv(input))
                }
            }
            LinOpSpec::Compose(ops) => {
                let mut current = input.clone();
                if adjoint {
                    // (A B)^T = B^T A^T: apply adjoints left-to-right.
                    for op in ops {
                        current = op.apply(&current, true)?;
                    }
                } else {
                    for op in ops.iter().rev() {
                        current = op.apply(&current, false)?;
                    }
                }
                Ok(current)
            }
        }
    }

    pub fn forward(&self, input: &Grid2D) -> Result<Grid2D> {
        self.apply(input, false)
    }

    pub fn adjoint(&self, input: &Grid2D) -> Result<Grid2D> {
        self.apply(input, true)
    }
}

/// The post-stack modeling operator `G = W D`: time derivative then wavelet
/// convolution.
pub fn post_stack_operator(wavelet: Wavelet) -> LinOpSpec {
    LinOpSpec::Compose(vec![LinOpSpec::ConvolveT(wavelet), LinOpSpec::DerivativeT])
}

fn derivative_t(x: &Grid2D) -> Grid2D {
    let (nt, nx) = x.shape();
    let mut out = Grid2D::zeros(nt, nx);
    for it in 0..nt.saturating_sub(1) {
        for ix in 0..nx {
            out.set(it, ix, x.get(it + 1, ix) - x.get(it, ix));
        }
    }
    out
}

// Transpose of the bidiagonal forward-difference matrix with zero last row.
fn derivative_t_adjoint(y: &Grid2D) -> Grid2D {
    let (nt, nx) = y.shape();
    let mut out = Grid2D::zeros(nt, nx);
    if nt == 1 {
        return out;
    }
    for ix in 0..nx {
        out.set(0, ix, -y.get(0, ix));
        for it in 1..nt - 1 {
            out.set(it, ix, y.get(it - 1, ix) - y.get(it, ix));
        }
        out.set(nt - 1, ix, y.get(nt - 2, ix));
    }
    out
}

fn derivative_x(x: &Grid2D) -> Grid2D {
    let (nt, nx) = x.shape();
    let mut out = Grid2D::zeros(nt, nx);
    for it in 0..nt {
        for ix in 0..nx.saturating_sub(1) {
            out.set(it, ix, x.get(it, ix + 1) - x.get(it, ix));
        }
    }
    out
}

fn derivative_x_adjoint(y: &Grid2D) -> Grid2D {
    let (nt, nx) = y.shape();
    let mut out = Grid2D::zeros(nt, nx);
    if nx == 1 {
        return out;
    }
    for it in 0..nt {
        out.set(it, 0, -y.get(it, 0));
        for ix in 1..nx - 1 {
            out.set(it, ix, y.get(it, ix - 1) - y.get(it, ix));
        }
        out.set(it, nx - 1, y.get(it, nx - 2));
    }
    out
}

// Same-length convolution along time, zero-padded. Forward:
// y[t] = sum_j w[h+j] x[t-j]; adjoint is the correlation y[t] = sum_j w[h+j] x[t+j].
// The summation order over j is fixed so results are bit-reproducible.
fn convolve_t(x: &Grid2D, w: &[f64], adjoint: bool) -> Grid2D {
    let (nt, nx) = x.shape();
    let h = (w.len() / 2) as isize;
    let n = nt as isize;
    let mut out = Grid2D::zeros(nt, nx);
    for ix in 0..nx {
        for t in 0..n {
            let mut acc = 0.0;
            for j in -h..=h {
                let s = if adjoint { t + j } else { t - j };
                if s >= 0 && s < n {
                    acc += w[(h + j) as usize] * x.get(s as usize, ix);
                }
            }
            out.set(t as usize, ix, acc);
        }
    }
    out
}

fn stack_tv(x: &Grid2D) -> Grid2D {
    let (nt, nx) = x.shape();
    let dt = derivative_t(x);
    let dx = derivative_x(x);
    let mut out = Grid2D::zeros(2 * nt, nx);
    for it in 0..nt {
        for ix in 0..nx {
            out.set(it, ix, dt.get(it, ix));
            out.set(nt + it, ix, dx.get(it, ix));
        }
    }
    out
}

fn stack_tv_adjoint(y: &Grid2D) -> Result<Grid2D> {
    let (nt2, nx) = y.shape();
    if nt2 % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "stacked-derivative adjoint needs an even number of rows, got {nt2}"
        )));
    }
    let nt = nt2 / 2;
    let top = Grid2D::from_fn(nt, nx, |it, ix| y.get(it, ix));
    let bottom = Grid2D::from_fn(nt, nx, |it, ix| y.get(nt + it, ix));
    let mut out = derivative_t_adjoint(&top);
    out.scaled_add(1.0, &derivative_x_adjoint(&bottom));
    Ok(out)
}

/// Adjoint verification: max over random trials of the normalized dot-test
/// error `|<Ax,y> - <x,A^T y>| / (|<Ax,y>| + |<x,A^T y>| + eps)`.
pub fn dot_test(op: &LinOpSpec, nt: usize, nx: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials < 1 {
        return Err(Error::InvalidArgument("dot test needs trials >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rnt, rnx) = op.range_shape((nt, nx));
    let mut max_err: f64 = 0.0;
    for _ in 0..trials {
        let x = Grid2D::from_fn(nt, nx, |_, _| rng.random_range(-1.0..1.0));
        let y = Grid2D::from_fn(rnt, rnx, |_, _| rng.random_range(-1.0..1.0));
        let ax = op.apply(&x, false)?;
        let aty = op.apply(&y, true)?;
        let lhs = ax.dot(&y);
        let rhs = x.dot(&aty);
        let err = (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + f64::EPSILON);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
