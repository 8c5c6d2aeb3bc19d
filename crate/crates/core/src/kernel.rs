//! Particle ensemble, RBF kernel with median-trick bandwidth, and the
//! empirical Stein direction
//!
//! ```text
//! phi*(m_i) = 1/n sum_j [ k(m_j, m_i) grad log pi(m_j) + grad_{m_j} k(m_j, m_i) ]
//! ```
//!
//! The kernel is exactly `k(m, m') = exp(-||m - m'||^2 / sigma^2)` with
//! `sigma` the median pairwise particle distance, recomputed from the current
//! particles every iteration.

use crate::error::{Error, Result};
use crate::linops::Grid2D;
use rayon::prelude::*;

/// Minimum bandwidth; engaged when particles (nearly) coincide so the kernel
/// stays well-defined.
pub const BANDWIDTH_FLOOR: f64 = 1e-8;

/// `n` particles, each a flattened `nt x nx` model, stored row-major as an
/// `n x d` block with `d = nt * nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    n: usize,
    d: usize,
    nt: usize,
    nx: usize,
    particles: Vec<f64>,
}

impl Ensemble {
    /// Wraps a flat `n x d` particle block; every particle must reshape to a
    /// finite `nt x nx` grid.
    pub fn from_particles(nt: usize, nx: usize, n: usize, particles: Vec<f64>) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument(
                "ensemble needs at least one particle".into(),
            ));
        }
        if nt == 0 || nx == 0 {
            return Err(Error::InvalidArgument(format!(
                "particle dims must be positive, got {nt}x{nx}"
            )));
        }
        let d = nt * nx;
        if particles.len() != n * d {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for {n} particles of dim {d}, got {}",
                n * d,
                particles.len()
            )));
        }
        if !particles.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "particle values must all be finite".into(),
            ));
        }
        Ok(Self {
            n,
            d,
            nt,
            nx,
            particles,
        })
    }

    /// Ensemble whose every particle equals the given grid.
    pub fn replicate(grid: &Grid2D, n: usize) -> Result<Self> {
        let (nt, nx) = grid.shape();
        let mut particles = Vec::with_capacity(n * grid.len());
        for _ in 0..n {
            particles.extend_from_slice(grid.values());
        }
        Self::from_particles(nt, nx, n, particles)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.d..(i + 1) * self.d]
    }

    /// Particle `i` reshaped to its grid form (copies).
    pub fn particle_grid(&self, i: usize) -> Grid2D {
        Grid2D::from_fn(self.nt, self.nx, |it, ix| {
            self.particle(i)[it * self.nx + ix]
        })
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.particles.chunks_exact(self.d)
    }
}

/// Kernel matrix and repulsion terms evaluated on one ensemble.
#[derive(Debug, Clone)]
pub struct KernelEval {
    sigma: f64,
    n: usize,
    d: usize,
    /// `n x n`, symmetric, unit diagonal.
    k_matrix: Vec<f64>,
    /// `n x d`; row i holds `sum_j grad_{m_j} k(m_j, m_i)`.
    grad_sums: Vec<f64>,
}

impl KernelEval {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.k_matrix[i * self.n + j]
    }

    pub fn k_matrix(&self) -> &[f64] {
        &self.k_matrix
    }

    pub fn grad_sum(&self, i: usize) -> &[f64] {
        &self.grad_sums[i * self.d..(i + 1) * self.d]
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}

/// Median of the `n(n-1)/2` pairwise particle distances, floored at
/// [`BANDWIDTH_FLOOR`]. Even counts take the midpoint of the two central
/// order statistics.
pub fn median_bandwidth(e: &Ensemble) -> Result<f64> {
    if e.n() < 2 {
        return Err(Error::InvalidArgument(
            "median bandwidth needs at least two particles".into(),
        ));
    }
    let n = e.n();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(dist_sq(e.particle(i), e.particle(j)).sqrt());
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let len = dists.len();
    let med = if len % 2 == 1 {
        dists[len / 2]
    } else {
        0.5 * (dists[len / 2 - 1] + dists[len / 2])
    };
    Ok(med.max(BANDWIDTH_FLOOR))
}

/// Evaluates `k_matrix[i][j] = exp(-||m_i - m_j||^2 / sigma^2)` and the
/// summed kernel gradients
/// `grad_sums[i] = sum_j (2/sigma^2) (m_i - m_j) k[j][i]`.
///
/// Rows are computed independently (parallelizable) with a fixed inner
/// accumulation order, so results are identical for any thread count; the
/// symmetry `k[i][j] == k[j][i]` is exact because both come from the same
/// arithmetic on `(m_i - m_j)^2`.
pub fn kernel_eval(e: &Ensemble, sigma: f64) -> Result<KernelEval> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )));
    }
    let n = e.n();
    let d = e.dim();
    let sig2 = sigma * sigma;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mi = e.particle(i);
            let mut k_row = vec![0.0; n];
            let mut grad = vec![0.0; d];
            for j in 0..n {
                let mj = e.particle(j);
                let k = (-dist_sq(mi, mj) / sig2).exp();
                k_row[j] = k;
                let w = 2.0 / sig2 * k;
                for l in 0..d {
                    grad[l] += w * (mi[l] - mj[l]);
                }
            }
            (k_row, grad)
        })
        .collect();
    let mut k_matrix = Vec::with_capacity(n * n);
    let mut grad_sums = Vec::with_capacity(n * d);
    for (k_row, grad) in rows {
        k_matrix.extend_from_slice(&k_row);
        grad_sums.extend_from_slice(&grad);
    }
    Ok(KernelEval {
        sigma,
        n,
        d,
        k_matrix,
        grad_sums,
    })
}

/// The Stein direction for every particle: row i is
/// `(1/n) (sum_j k[j][i] grads[j] + grad_sums[i])`.
///
/// `grads` is the `n x d` block of per-particle log-density gradients.
pub fn phi_star(e: &Ensemble, grads: &[f64], ke: &KernelEval) -> Result<Vec<f64>> {
    let n = e.n();
    let d = e.dim();
    if grads.len() != n * d {
        return Err(Error::ShapeMismatch(format!(
            "gradient block has {} values, expected {}",
            grads.len(),
            n * d
        )));
    }
    if ke.n != n || ke.d != d {
        return Err(Error::ShapeMismatch(
            "kernel evaluation does not match ensemble dims".into(),
        ));
    }
    let inv_n = 1.0 / n as f64;
    let out: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; d];
            for j in 0..n {
                // k[j][i] read from row i by exact symmetry.
                let k = ke.k(i, j);
                let gj = &grads[j * d..(j + 1) * d];
                for l in 0..d {
                    acc[l] += k * gj[l];
                }
            }
            let gs = ke.grad_sum(i);
            for l in 0..d {
                acc[l] = (acc[l] + gs[l]) * inv_n;
            }
            acc
        })
        .collect();
    let mut flat = Vec::with_capacity(n * d);
    for row in out {
        flat.extend_from_slice(&row);
    }
    Ok(flat)
}
